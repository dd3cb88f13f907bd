#include "bicomp/compressor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bicomp {

CompressorSpec CompressorSpec::quantize(int levels) {
  if (levels < 1) throw ConfigError("s", "quantization levels must be at least 1");
  return {CompressorKind::quantize, levels, 1.0};
}

CompressorSpec CompressorSpec::sparsify(double keep) {
  if (!(keep > 0.0 && keep <= 1.0)) throw ConfigError("p", "keep probability must lie in (0, 1]");
  return {CompressorKind::sparsify, 1, keep};
}

double CompressorSpec::omega(int d) const {
  switch (kind) {
    case CompressorKind::identity:
      return 0.0;
    case CompressorKind::quantize: {
      const double dd = d;
      const double ss = s;
      return std::min(dd / (ss * ss), std::sqrt(dd) / ss);
    }
    case CompressorKind::sparsify:
      return 1.0 / p - 1.0;
  }
  return 0.0;
}

std::string CompressorSpec::describe() const {
  std::ostringstream out;
  switch (kind) {
    case CompressorKind::identity: out << "identity"; break;
    case CompressorKind::quantize: out << "quantize(s=" << s << ")"; break;
    case CompressorKind::sparsify: out << "sparsify(p=" << p << ")"; break;
  }
  return out.str();
}

nlohmann::json CompressorSpec::to_json() const {
  switch (kind) {
    case CompressorKind::identity: return {{"kind", "identity"}};
    case CompressorKind::quantize: return {{"kind", "quantize"}, {"s", s}};
    case CompressorKind::sparsify: return {{"kind", "sparsify"}, {"p", p}};
  }
  return {};
}

CompressorSpec CompressorSpec::from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "identity") return identity();
  if (kind == "quantize") return quantize(j.value("s", 1));
  if (kind == "sparsify") return sparsify(j.at("p").get<double>());
  throw ConfigError("kind", "unknown compressor '" + kind + "'");
}

Bits bit_cost(const CompressorSpec& spec, int d) {
  if (d < 1) throw DimensionError("bit_cost: dimension must be at least 1");
  const double dd = d;
  const double log2d = std::log2(dd);
  switch (spec.kind) {
    case CompressorKind::identity:
      return 32ULL * static_cast<Bits>(d);
    case CompressorKind::quantize: {
      if (spec.s == 1) {
        // log2(1) = 0 would make a d = 1 message free; keep the norm header.
        return std::max<Bits>(32, static_cast<Bits>(std::ceil(32.0 * std::sqrt(dd) * log2d)));
      }
      const auto body = static_cast<Bits>(std::ceil(32.0 + dd * (std::log2(spec.s) + 1.0)));
      const auto header = static_cast<Bits>(std::ceil(std::sqrt(dd) * log2d));
      return body + header;
    }
    case CompressorKind::sparsify: {
      const auto kept = static_cast<Bits>(std::ceil(spec.p * dd));
      return kept * (32 + static_cast<Bits>(std::ceil(log2d)));
    }
  }
  return 0;
}

Bits zero_message_cost(const CompressorSpec& spec, int d) {
  return spec.is_identity() ? bit_cost(spec, d) : 32;
}

ParamVector quantize_s(const ParamVector& v, int s, Stream& rng) {
  if (s < 1) throw std::invalid_argument("quantize_s: s must be at least 1");
  ParamVector out = ParamVector::Zero(v.size());
  const double norm = v.norm();
  if (norm == 0.0) return out;
  const double levels = s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double a = levels * std::abs(v(i)) / norm;
    double level = std::floor(a);
    const double frac = a - level;
    if (frac > 0.0 && rng.uniform() < frac) level += 1.0;
    if (level != 0.0) out(i) = std::copysign(norm * level / levels, v(i));
  }
  return out;
}

ParamVector sparsify_p(const ParamVector& v, double p, Stream& rng) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("sparsify_p: p must lie in (0, 1]");
  ParamVector out = ParamVector::Zero(v.size());
  if (p == 1.0) return v;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (rng.uniform() < p) out(i) = v(i) / p;
  return out;
}

Compressed compress(const CompressorSpec& spec, const ParamVector& v, Stream& rng) {
  require_finite(v, "compress input");
  const int d = static_cast<int>(v.size());
  const bool zero = v.isZero(0.0);
  Compressed c;
  switch (spec.kind) {
    case CompressorKind::identity: c.value = v; break;
    case CompressorKind::quantize: c.value = quantize_s(v, spec.s, rng); break;
    case CompressorKind::sparsify: c.value = sparsify_p(v, spec.p, rng); break;
  }
  c.bits = zero ? zero_message_cost(spec, d) : bit_cost(spec, d);
  return c;
}

}  // namespace bicomp
