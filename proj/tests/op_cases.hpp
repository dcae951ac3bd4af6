#pragma once

// Randomized gradient-check cases, one per differentiable operator. Each
// draw picks small random shapes and contracts the operator output with a
// random coefficient tensor so every output element reaches the loss.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace alc::testing {

struct OpDraw {
  GraphFn fn;
  std::vector<nn::Tensor> leaves;
};

struct OpCase {
  std::string name;
  std::function<OpDraw(std::mt19937_64&)> draw;
};

namespace detail {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Wraps an op so the scalar is sum(op(...) * coeffs) with coeffs drawn once.
inline GraphFn contract(std::function<nn::Var(std::vector<nn::Var>&)> op, nn::Shape out_shape, std::mt19937_64& rng) {
  auto coeffs = std::make_shared<nn::Tensor>(random_tensor(std::move(out_shape), rng));
  return [op = std::move(op), coeffs](nn::Tape&, std::vector<nn::Var>& v) {
    return nn::weighted_sum(op(v), *coeffs);
  };
}

}  // namespace detail

inline std::vector<OpCase> operator_cases() {
  using detail::contract;
  using detail::pick;
  std::vector<OpCase> cases;

  cases.push_back({"dense", [](std::mt19937_64& rng) {
                     const std::size_t b = pick(rng, 1, 4), in = pick(rng, 1, 5), out = pick(rng, 1, 4);
                     return OpDraw{contract([](auto& v) { return nn::dense(v[0], v[1], v[2]); }, {b, out}, rng),
                                   {random_tensor({b, in}, rng), random_tensor({in, out}, rng),
                                    random_tensor({out}, rng)}};
                   }});

  cases.push_back({"conv1d", [](std::mt19937_64& rng) {
                     const std::size_t b = pick(rng, 1, 3), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
                     const std::size_t k = pick(rng, 1, 4), stride = pick(rng, 1, 3), pad = pick(rng, 0, 1);
                     const std::size_t len = k + pick(rng, 0, 7);
                     const std::size_t out_len = (len + 2 * pad - k) / stride + 1;
                     return OpDraw{contract([=](auto& v) { return nn::conv1d(v[0], v[1], v[2], stride, pad); },
                                            {b, co, out_len}, rng),
                                   {random_tensor({b, ci, len}, rng), random_tensor({co, ci, k}, rng),
                                    random_tensor({co}, rng)}};
                   }});

  cases.push_back({"relu", [](std::mt19937_64& rng) {
                     const std::size_t n = pick(rng, 1, 12);
                     return OpDraw{contract([](auto& v) { return nn::relu(v[0]); }, {n}, rng),
                                   {random_tensor({n}, rng)}};
                   }});

  cases.push_back({"max_pool1d", [](std::mt19937_64& rng) {
                     const std::size_t b = pick(rng, 1, 3), c = pick(rng, 1, 3);
                     const std::size_t k = pick(rng, 1, 3), stride = pick(rng, 1, 3), len = k + pick(rng, 0, 6);
                     const std::size_t out_len = (len - k) / stride + 1;
                     return OpDraw{contract([=](auto& v) { return nn::max_pool1d(v[0], k, stride); },
                                            {b, c, out_len}, rng),
                                   {random_tensor({b, c, len}, rng)}};
                   }});

  cases.push_back({"global_avg_pool", [](std::mt19937_64& rng) {
                     const std::size_t b = pick(rng, 1, 3), c = pick(rng, 1, 3), len = pick(rng, 1, 6);
                     return OpDraw{contract([](auto& v) { return nn::global_avg_pool(v[0]); }, {b, c}, rng),
                                   {random_tensor({b, c, len}, rng)}};
                   }});

  cases.push_back({"batch_norm", [](std::mt19937_64& rng) {
                     const std::size_t b = pick(rng, 1, 3), c = pick(rng, 1, 3), len = pick(rng, 2, 5);
                     auto stats = std::make_shared<nn::BatchNormStats>(c);
                     return OpDraw{contract(
                                       [stats](auto& v) {
                                         return nn::batch_norm(v[0], v[1], v[2], *stats, nn::Mode::Train);
                                       },
                                       {b, c, len}, rng),
                                   {random_tensor({b, c, len}, rng), random_tensor({c}, rng, 0.5, 1.5),
                                    random_tensor({c}, rng)}};
                   }});

  cases.push_back({"batch_norm_eval", [](std::mt19937_64& rng) {
                     const std::size_t b = pick(rng, 1, 3), c = pick(rng, 1, 3), len = pick(rng, 1, 5);
                     auto stats = std::make_shared<nn::BatchNormStats>(c);
                     stats->running_mean = random_tensor({c}, rng);
                     stats->running_var = random_tensor({c}, rng, 0.5, 2.0);
                     return OpDraw{contract(
                                       [stats](auto& v) {
                                         return nn::batch_norm(v[0], v[1], v[2], *stats, nn::Mode::Eval);
                                       },
                                       {b, c, len}, rng),
                                   {random_tensor({b, c, len}, rng), random_tensor({c}, rng),
                                    random_tensor({c}, rng)}};
                   }});

  cases.push_back({"lstm", [](std::mt19937_64& rng) {
                     const std::size_t b = pick(rng, 1, 2), steps = pick(rng, 1, 4), in = pick(rng, 1, 3);
                     const std::size_t h = pick(rng, 1, 3);
                     return OpDraw{contract([](auto& v) { return nn::lstm(v[0], v[1], v[2], v[3]); }, {b, h}, rng),
                                   {random_tensor({b, steps, in}, rng), random_tensor({in, 4 * h}, rng),
                                    random_tensor({h, 4 * h}, rng), random_tensor({4 * h}, rng)}};
                   }});

  cases.push_back({"softmax_cross_entropy", [](std::mt19937_64& rng) {
                     const std::size_t b = pick(rng, 1, 4), c = pick(rng, 2, 4);
                     std::vector<int> labels(b);
                     for (auto& y : labels) y = static_cast<int>(pick(rng, 0, c - 1));
                     return OpDraw{[labels](nn::Tape&, std::vector<nn::Var>& v) {
                                     return nn::softmax_cross_entropy(v[0], labels);
                                   },
                                   {random_tensor({b, c}, rng, -2.0, 2.0)}};
                   }});

  return cases;
}

}  // namespace alc::testing
