#pragma once

#include "bicomp/rng.hpp"
#include "bicomp/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

namespace bicomp {

using Bits = std::uint64_t;

enum class CompressorKind { identity, quantize, sparsify };

/// Unbiased compression operator. omega() depends on the dimension for
/// quantization, so it is evaluated per problem.
struct CompressorSpec {
  CompressorKind kind = CompressorKind::identity;
  int s = 1;       // quantization levels
  double p = 1.0;  // keep probability

  static CompressorSpec identity() { return {}; }
  static CompressorSpec quantize(int levels);
  static CompressorSpec sparsify(double keep);

  bool is_identity() const noexcept { return kind == CompressorKind::identity; }
  double omega(int d) const;
  std::string describe() const;

  nlohmann::json to_json() const;
  static CompressorSpec from_json(const nlohmann::json& j);

  friend bool operator==(const CompressorSpec&, const CompressorSpec&) = default;
};

struct Compressed {
  ParamVector value;
  Bits bits = 0;
};

/// Bits for one non-zero message of dimension d.
Bits bit_cost(const CompressorSpec& spec, int d);

/// Bits charged for an all-zero message: a single 32-bit norm header, except
/// the identity which always ships 32 d.
Bits zero_message_cost(const CompressorSpec& spec, int d);

/// Stochastic s-level quantization against the 2-norm. Coordinates already on
/// a level consume no randomness.
ParamVector quantize_s(const ParamVector& v, int s, Stream& rng);

/// Keeps each coordinate with probability p, scaled by 1/p. One uniform draw
/// per coordinate.
ParamVector sparsify_p(const ParamVector& v, double p, Stream& rng);

Compressed compress(const CompressorSpec& spec, const ParamVector& v, Stream& rng);

}  // namespace bicomp
