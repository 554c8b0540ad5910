#include "s3rp/objective.hpp"

#include <array>
#include <algorithm>
#include <cmath>

#include "s3rp/diffops.hpp"
#include "s3rp/error.hpp"

namespace s3rp::objective {

using ad::Shape;

void LossWeights::validate() const {
  require(lambda >= 0.0 && beta >= 0.0 && gamma >= 0.0, ErrorCode::config,
          "loss weights must be >= 0");
  require(mmd_scale > 0.0 && prior_variance > 0.0, ErrorCode::config,
          "loss.mmd_scale and loss.prior_variance must be > 0");
}

double reconstruction_loss(std::span<const double> target, std::span<const double> generated) {
  require(target.size() == generated.size() && !target.empty(), ErrorCode::data,
          "reconstruction_loss: size mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    const double d = target[k] - generated[k];
    s += d * d;
  }
  return s / static_cast<double>(target.size());
}

Var reconstruction_loss(const Var& target, const Var& generated) {
  require(target.shape() == generated.shape(), ErrorCode::data,
          "reconstruction_loss: shape mismatch");
  return ad::mean_square(generated - target);
}

double imq_kernel(std::span<const double> a, std::span<const double> b, double c) {
  double r2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    r2 += d * d;
  }
  return c / (c + r2);
}

namespace {

void check_sets(std::size_t nq, std::size_t np) {
  require(nq >= 2 && np >= 2, ErrorCode::data, "mmd needs at least two samples per set");
}

}  // namespace

double mmd(const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& p,
           double c) {
  check_sets(q.size(), p.size());
  const double n = static_cast<double>(q.size()), m = static_cast<double>(p.size());
  double qq = 0.0, pp = 0.0, qp = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t j = 0; j < q.size(); ++j)
      if (i != j) qq += imq_kernel(q[i], q[j], c);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j)
      if (i != j) pp += imq_kernel(p[i], p[j], c);
  // Equal-size sets pair up by index (sample i of both sets may come from the
  // same sequence), so matching pairs leave the cross term.
  const bool paired = q.size() == p.size();
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j)
      if (!paired || i != j) qp += imq_kernel(q[i], p[j], c);
  const double cross = paired ? n * (n - 1.0) : n * m;
  return qq / (n * (n - 1.0)) + pp / (m * (m - 1.0)) - 2.0 * qp / cross;
}

double mmd_biased(const std::vector<std::vector<double>>& q,
                  const std::vector<std::vector<double>>& p, double c) {
  require(!q.empty() && !p.empty(), ErrorCode::data, "mmd_biased: empty set");
  const double n = static_cast<double>(q.size()), m = static_cast<double>(p.size());
  double qq = 0.0, pp = 0.0, qp = 0.0;
  for (const auto& a : q)
    for (const auto& b : q) qq += imq_kernel(a, b, c);
  for (const auto& a : p)
    for (const auto& b : p) pp += imq_kernel(a, b, c);
  for (const auto& a : q)
    for (const auto& b : p) qp += imq_kernel(a, b, c);
  return qq / (n * n) + pp / (m * m) - 2.0 * qp / (n * m);
}

Var mmd(const Var& q, const Var& p, double c) {
  const Shape qs = q.shape(), ps = p.shape();
  require(qs.c == ps.c && qs.h == ps.h && qs.w == ps.w, ErrorCode::data, "mmd: sample shapes differ");
  check_sets(static_cast<std::size_t>(qs.b), static_cast<std::size_t>(ps.b));
  const std::size_t d = static_cast<std::size_t>(qs.c) * qs.plane();
  const int nq = qs.b, np = ps.b;
  const double* qv = q.value().data();
  const double* pv = p.value().data();
  auto k = [&](const double* a, const double* b) {
    return imq_kernel({a, d}, {b, d}, c);
  };
  double qq = 0.0, pp = 0.0, qp = 0.0;
  for (int i = 0; i < nq; ++i)
    for (int j = i + 1; j < nq; ++j) qq += 2.0 * k(qv + i * d, qv + j * d);
  for (int i = 0; i < np; ++i)
    for (int j = i + 1; j < np; ++j) pp += 2.0 * k(pv + i * d, pv + j * d);
  const bool paired = nq == np;
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < np; ++j)
      if (!paired || i != j) qp += k(qv + i * d, pv + j * d);
  const double wqq = 1.0 / (nq * (nq - 1.0)), wpp = 1.0 / (np * (np - 1.0)),
               wqp = -2.0 / (paired ? nq * (nq - 1.0) : static_cast<double>(nq) * np);
  const double value = wqq * qq + wpp * pp + wqp * qp;

  return ad::make_op(ad::kScalar, {value}, {q, p}, [=](ad::Node& self) {
    ad::Node& nqd = *self.parents[0];
    ad::Node& npd = *self.parents[1];
    const double g = self.grad[0];
    const double* a_all = nqd.value.data();
    const double* b_all = npd.value.data();
    std::vector<double>* gq = nqd.requires_grad ? &nqd.ensure_grad() : nullptr;
    std::vector<double>* gp = npd.requires_grad ? &npd.ensure_grad() : nullptr;
    // dk/da = -2 C (a - b) / (C + r^2)^2, applied with weight w to a and -w to b.
    auto pair_grad = [&](const double* a, const double* b, double* ga, double* gb, double w) {
      double r2 = 0.0;
      for (std::size_t e = 0; e < d; ++e) r2 += (a[e] - b[e]) * (a[e] - b[e]);
      const double f = -2.0 * c / ((c + r2) * (c + r2)) * w * g;
      for (std::size_t e = 0; e < d; ++e) {
        const double t = f * (a[e] - b[e]);
        if (ga) ga[e] += t;
        if (gb) gb[e] -= t;
      }
    };
    for (int i = 0; i < nq; ++i)
      for (int j = i + 1; j < nq; ++j)
        pair_grad(a_all + i * d, a_all + j * d, gq ? gq->data() + i * d : nullptr,
                  gq ? gq->data() + j * d : nullptr, 2.0 * wqq);
    for (int i = 0; i < np; ++i)
      for (int j = i + 1; j < np; ++j)
        pair_grad(b_all + i * d, b_all + j * d, gp ? gp->data() + i * d : nullptr,
                  gp ? gp->data() + j * d : nullptr, 2.0 * wpp);
    for (int i = 0; i < nq; ++i)
      for (int j = 0; j < np; ++j)
        if (!paired || i != j)
          pair_grad(a_all + i * d, b_all + j * d, gq ? gq->data() + i * d : nullptr,
                    gp ? gp->data() + j * d : nullptr, wqp);
  });
}

namespace {

// (u, v) in cells per frame, c in units of std_c; returns [u, v, c] as three vars.
std::array<Var, 3> grid_units(const Var& frame, const PhysicsScales& s) {
  const double vel = s.dt / s.ds;
  const std::array<double, 3> gain{s.norm.std[0] * vel, s.norm.std[1] * vel, 1.0};
  const std::array<double, 3> offset{s.norm.mean[0] * vel, s.norm.mean[1] * vel,
                                     s.norm.mean[2] / s.norm.std[2]};
  Var g = ad::channel_affine(frame, gain, offset);
  return {ad::slice_channels(g, 0, 1), ad::slice_channels(g, 1, 1), ad::slice_channels(g, 2, 1)};
}

}  // namespace

std::pair<Var, Var> physics_loss(std::span<const Var> frames, const PhysicsScales& scales) {
  require(frames.size() >= 2, ErrorCode::data, "physics_loss needs at least two frames");
  require(scales.dt > 0.0 && scales.ds > 0.0, ErrorCode::config, "physics_loss: bad scales");
  std::vector<std::array<Var, 3>> g;
  g.reserve(frames.size());
  for (const auto& f : frames) g.push_back(grid_units(f, scales));

  std::vector<Var> adv, div;
  for (std::size_t t = 0; t < g.size(); ++t) {
    const auto& [u, v, c] = g[t];
    div.push_back(ad::mean_square(ad::ddx(u, 1.0) + ad::ddy(v, 1.0)));
    if (t + 1 < g.size()) {
      Var r = (g[t + 1][2] - c) + ad::ddx(c * u, 1.0) + ad::ddy(c * v, 1.0);
      adv.push_back(ad::mean_square(r));
    }
  }
  return {ad::scale(ad::sum_all(adv), 1.0 / static_cast<double>(adv.size())),
          ad::scale(ad::sum_all(div), 1.0 / static_cast<double>(div.size()))};
}

std::pair<double, double> physics_loss(const FieldSequence& yhat, const PhysicsScales& scales) {
  require(yhat.frames() >= 2, ErrorCode::data, "physics_loss needs at least two frames");
  const int T = yhat.frames();
  double adv = 0.0, div = 0.0;
  for (int t = 0; t < T; ++t) {
    const VectorField u = yhat.wind(t);
    div += diffops::mean_square(diffops::divergence(u, scales.ds));
    if (t + 1 < T) {
      const ScalarField c0 = yhat.channel(t, FieldSequence::kC);
      const ScalarField c1 = yhat.channel(t + 1, FieldSequence::kC);
      const auto dcdt = diffops::ddt({c0, c1}, scales.dt);
      const ScalarField flux = diffops::advective_flux_div(c0, u, scales.ds);
      ScalarField r(c0.n);
      for (std::size_t k = 0; k < r.values.size(); ++k)
        r.values[k] = dcdt[0].values[k] + flux.values[k];
      adv += diffops::mean_square(r);
    }
  }
  const double sc = scales.dt / scales.norm.std[2];
  return {adv / (T - 1) * sc * sc, div / T * scales.dt * scales.dt};
}

LossResult total_loss(const model::S3rpModel& m, std::span<const FieldSequence* const> batch,
                      double dt_frame, const LossWeights& w, NoiseSource& noise) {
  w.validate();
  require(!batch.empty(), ErrorCode::data, "total_loss: empty batch");
  const int T = batch[0]->frames();
  require(T >= 2, ErrorCode::data, "total_loss: sequences need at least two frames");
  for (const auto* s : batch)
    require(s->resolution() == Resolution::lr && s->frames() == T, ErrorCode::data,
            "total_loss: batch must hold LR sequences of equal length");

  const auto& norm = m.normalization();
  std::vector<Var> x;
  x.reserve(T);
  for (int t = 0; t < T; ++t) x.push_back(model::frame_batch(batch, t, norm));

  const bool need_mmd = w.lambda > 0.0;
  LossResult res;
  res.unroll = m.unroll(x, T, noise, -1, need_mmd);
  const auto& u = res.unroll;

  std::vector<Var> recon_terms, mmd_terms, decoded_frames;
  for (std::size_t k = 0; k < u.decoded.size(); ++k) {
    const int idx = u.decoded[k];
    recon_terms.push_back(reconstruction_loss(x[idx], m.generator_output(u.outputs[idx])));
    decoded_frames.push_back(u.outputs[idx]);
  }
  const double c_kernel = w.mmd_scale * static_cast<double>(m.latent_size()) * w.prior_variance;
  if (need_mmd)
    for (std::size_t k = 0; k < u.latents.size(); ++k)
      mmd_terms.push_back(mmd(u.latents[k].z, u.prior_samples[k], c_kernel));

  Var recon = ad::sum_all(recon_terms);
  std::vector<Var> total_terms{recon};
  res.parts.recon = recon.item();
  if (need_mmd) {
    Var mm = ad::sum_all(mmd_terms);
    // Reported clamped at zero; the gradient path keeps the raw estimate.
    res.parts.mmd = std::max(0.0, mm.item());
    total_terms.push_back(ad::scale(mm, w.lambda));
  }
  if (decoded_frames.size() >= 2) {
    PhysicsScales scales{dt_frame, m.config().grid.spacing_hr(), norm};
    auto [adv, div] = physics_loss(decoded_frames, scales);
    res.parts.phys_adv = adv.item();
    res.parts.phys_div = div.item();
    if (w.gamma > 0.0) {
      total_terms.push_back(ad::scale(adv, w.gamma));
      total_terms.push_back(ad::scale(div, w.gamma * w.beta));
    }
  }
  res.total = ad::sum_all(total_terms);
  res.parts.total = res.parts.recon + w.lambda * res.parts.mmd +
                    w.gamma * (res.parts.phys_adv + w.beta * res.parts.phys_div);
  return res;
}

}  // namespace s3rp::objective
