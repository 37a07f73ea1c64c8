#include "driftalign/types.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "driftalign/error.hpp"

namespace driftalign {

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

AudioBuffer::AudioBuffer(std::vector<double> samples,
                         std::uint32_t sample_rate_hz)
    : samples_(std::move(samples)), sample_rate_hz_(sample_rate_hz) {
  if (sample_rate_hz_ == 0) {
    throw ConfigError("sample rate must be positive");
  }
}

bool KeypointSet::has_truth() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(),
                     [](const Keypoint& k) { return k.t1.has_value(); });
}

std::vector<double> KeypointSet::t0() const {
  std::vector<double> out;
  out.reserve(entries.size());
  for (const auto& k : entries) out.push_back(k.t0);
  return out;
}

std::vector<double> KeypointSet::t1() const {
  std::vector<double> out;
  out.reserve(entries.size());
  for (const auto& k : entries) {
    if (!k.t1) {
      throw ConstraintError("keypoint " + std::to_string(k.index) +
                            " has no channel-1 timestamp");
    }
    out.push_back(*k.t1);
  }
  return out;
}

KeypointSet KeypointSet::grid(std::size_t n) {
  KeypointSet k;
  k.entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    k.entries.push_back({i, static_cast<double>(i), std::nullopt});
  }
  return k;
}

const KeypointSet& validate_keypoints(const KeypointSet& k, double delta_max) {
  for (std::size_t pos = 0; pos < k.entries.size(); ++pos) {
    const Keypoint& e = k.entries[pos];
    if (!std::isfinite(e.t0)) {
      throw ConstraintError("non-finite t0 at i=" + std::to_string(e.index));
    }
    if (pos > 0 && !(e.t0 > k.entries[pos - 1].t0)) {
      throw ConstraintError("t0 not strictly increasing at i=" +
                            std::to_string(e.index));
    }
    if (k.canonical_grid && e.t0 != static_cast<double>(e.index)) {
      throw ConstraintError("t0 grid violated at i=" + std::to_string(e.index) +
                            " (t0=" + fmt_double(e.t0) + ")");
    }
    if (e.t1) {
      if (!std::isfinite(*e.t1) || std::abs(*e.t1 - e.t0) > delta_max) {
        throw ConstraintError("constraint violation at i=" +
                              std::to_string(e.index) + ": |t1 - t0| = " +
                              fmt_double(std::abs(*e.t1 - e.t0)) + " > " +
                              fmt_double(delta_max));
      }
    }
  }
  return k;
}

DriftTrace DriftTrace::affine(double alpha, double beta, double domain_end_s,
                              double delta_max) {
  if (!std::isfinite(alpha) || !std::isfinite(beta) || !(alpha > 0.0)) {
    throw ConstraintError("affine drift must have finite alpha > 0 (alpha=" +
                          fmt_double(alpha) + ")");
  }
  if (!(domain_end_s >= 0.0)) {
    throw ConfigError("drift domain end must be non-negative");
  }
  const double worst =
      std::max(std::abs(beta), std::abs((alpha - 1.0) * domain_end_s + beta));
  if (worst > delta_max) {
    throw ConstraintError("infeasible affine drift: |D(t) - t| reaches " +
                          fmt_double(worst) + " s > delta_max " +
                          fmt_double(delta_max) + " s");
  }
  DriftTrace d;
  d.kind_ = Kind::affine;
  d.alpha_ = alpha;
  d.beta_ = beta;
  d.delta_max_ = delta_max;
  d.domain_end_ = domain_end_s;
  return d;
}

DriftTrace DriftTrace::piecewise(std::vector<Knot> knots, double domain_end_s,
                                 double delta_max) {
  if (knots.empty()) throw ConfigError("piecewise drift needs >= 1 knot");
  for (std::size_t i = 0; i < knots.size(); ++i) {
    if (!std::isfinite(knots[i].t) || !std::isfinite(knots[i].offset)) {
      throw ConstraintError("non-finite drift knot " + std::to_string(i));
    }
    if (std::abs(knots[i].offset) > delta_max) {
      throw ConstraintError("drift knot " + std::to_string(i) + " offset " +
                            fmt_double(knots[i].offset) +
                            " s exceeds delta_max " + fmt_double(delta_max));
    }
    if (i > 0) {
      if (!(knots[i].t > knots[i - 1].t)) {
        throw ConstraintError("drift knots not strictly increasing at " +
                              std::to_string(i));
      }
      // D(t) = t + offset(t) is increasing iff every segment slope > -1.
      const double slope = (knots[i].offset - knots[i - 1].offset) /
                           (knots[i].t - knots[i - 1].t);
      if (!(slope > -1.0)) {
        throw ConstraintError("drift not monotone between knots " +
                              std::to_string(i - 1) + " and " +
                              std::to_string(i));
      }
    }
  }
  DriftTrace d;
  d.kind_ = Kind::piecewise_linear;
  d.knots_ = std::move(knots);
  d.delta_max_ = delta_max;
  d.domain_end_ = domain_end_s;
  return d;
}

double DriftTrace::offset_at(double t) const {
  if (t <= knots_.front().t) return knots_.front().offset;
  if (t >= knots_.back().t) return knots_.back().offset;
  auto it = std::upper_bound(
      knots_.begin(), knots_.end(), t,
      [](double v, const Knot& k) { return v < k.t; });
  const Knot& hi = *it;
  const Knot& lo = *(it - 1);
  const double w = (t - lo.t) / (hi.t - lo.t);
  return lo.offset + w * (hi.offset - lo.offset);
}

double DriftTrace::operator()(double t) const {
  if (kind_ == Kind::affine) return alpha_ * t + beta_;
  return t + offset_at(t);
}

double DriftTrace::inverse(double u) const {
  if (kind_ == Kind::affine) return (u - beta_) / alpha_;
  // D is increasing; locate the segment of knot images containing u.
  const Knot& first = knots_.front();
  const Knot& last = knots_.back();
  if (u <= first.t + first.offset) return u - first.offset;
  if (u >= last.t + last.offset) return u - last.offset;
  std::size_t lo = 0;
  std::size_t hi = knots_.size() - 1;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (knots_[mid].t + knots_[mid].offset <= u) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double u_lo = knots_[lo].t + knots_[lo].offset;
  const double u_hi = knots_[hi].t + knots_[hi].offset;
  const double w = (u - u_lo) / (u_hi - u_lo);
  return knots_[lo].t + w * (knots_[hi].t - knots_[lo].t);
}

AffineCandidate AffineCandidate::make(double alpha, double beta,
                                      double duration_s, double delta_max) {
  if (!(duration_s > 0.0)) throw ConfigError("duration must be positive");
  const double lo = 1.0 - delta_max / duration_s;
  const double hi = 1.0 + delta_max / duration_s;
  if (!(alpha >= lo && alpha <= hi)) {
    throw ConstraintError("candidate alpha " + fmt_double(alpha) +
                          " outside [" + fmt_double(lo) + ", " +
                          fmt_double(hi) + "]");
  }
  if (!(beta >= -delta_max && beta <= delta_max)) {
    throw ConstraintError("candidate beta " + fmt_double(beta) +
                          " outside [-" + fmt_double(delta_max) + ", " +
                          fmt_double(delta_max) + "]");
  }
  return {alpha, beta};
}

PredictionSet PredictionSet::from_logits(std::vector<double> logits,
                                         AffineCandidate candidate) {
  if (logits.empty()) throw ConfigError("prediction set must be non-empty");
  PredictionSet p;
  p.probs.reserve(logits.size());
  for (double y : logits) p.probs.push_back(logistic(y));
  p.logits = std::move(logits);
  p.candidate = candidate;
  return p;
}

PredictionSet PredictionSet::from_probs(std::vector<double> probs,
                                        AffineCandidate candidate) {
  if (probs.empty()) throw ConfigError("prediction set must be non-empty");
  PredictionSet p;
  p.logits.reserve(probs.size());
  for (double v : probs) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError("probability outside [0, 1]: " + fmt_double(v));
    }
    p.logits.push_back(std::log(v) - std::log1p(-v));
  }
  p.probs = std::move(probs);
  p.candidate = candidate;
  return p;
}

void ScoringWeights::validate() const {
  for (double w : {w_pos, w_top, w_sig, w_exp}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw ConfigError("scoring weights must be finite and non-negative");
    }
  }
  if (w_pos + w_top + w_sig + w_exp == 0.0) {
    throw ConfigError("scoring weights must not all be zero");
  }
}

}  // namespace driftalign
