// Copyright 2026 The fgahoi Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Parameter naming helpers shared by the model stages.

#pragma once

#include <string>

#include "fgahoi/autograd.hpp"
#include "fgahoi/params.hpp"

namespace fga::layers {

inline void add_linear(ParamStore& s, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  s.add(name + ".w", init::xavier(in, out, rng));
  s.add(name + ".b", init::zeros({out}));
}

inline void add_norm(ParamStore& s, const std::string& name, std::size_t dim) {
  s.add(name + ".gamma", init::constant({dim}, 1.0));
  s.add(name + ".beta", init::zeros({dim}));
}

/// Bias-free query/key/value/output matrices.
inline void add_attention(ParamStore& s, const std::string& name, std::size_t dim, Rng& rng) {
  for (const char* m : {".q", ".k", ".v", ".o"}) s.add(name + m, init::xavier(dim, dim, rng));
}

inline Var lin(Bound& p, const std::string& name, Var x) { return linear(x, p(name + ".w"), p(name + ".b")); }

inline Var norm(Bound& p, const std::string& name, Var x) {
  return layer_norm(x, p(name + ".gamma"), p(name + ".beta"));
}

inline AttentionProjections attention(Bound& p, const std::string& name) {
  return {p(name + ".q"), p(name + ".k"), p(name + ".v"), p(name + ".o")};
}

}  // namespace fga::layers
