#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "reformat/common.hpp"
#include "reformat/splits.hpp"

namespace reformat {

enum class Partition { TRAIN, VAL, TEST };

inline std::string_view to_string(Partition p) {
  return p == Partition::TRAIN ? "train" : p == Partition::VAL ? "val" : "test";
}

/// Rows of one partition, tagged so consumers can assert what they receive.
struct DataHandle {
  Partition partition = Partition::TRAIN;
  std::vector<std::size_t> rows;
  Matrix X;
  Vector y;
};

inline DataHandle partition_handle(const Matrix& X, const Vector& y, const SplitPlan& plan, Partition p) {
  DataHandle h;
  h.partition = p;
  h.rows = p == Partition::TRAIN ? plan.train : p == Partition::VAL ? plan.val : plan.test;
  const std::vector<Index> idx(h.rows.begin(), h.rows.end());
  h.X = X(idx, Eigen::all);
  h.y = y(idx);
  return h;
}

enum class Scale { LINEAR, LOG };

/// A finite set of values, a real range or an inclusive integer range.
struct Param {
  enum class Kind { SET, RANGE, INT_RANGE };
  std::string name;
  Kind kind = Kind::SET;
  std::vector<nlohmann::json> values;
  double lo = 0.0, hi = 0.0;
  Scale scale = Scale::LINEAR;

  static Param set(std::string name, std::vector<nlohmann::json> values) {
    return {std::move(name), Kind::SET, std::move(values), 0, 0, Scale::LINEAR};
  }
  static Param range(std::string name, double lo, double hi, Scale scale = Scale::LINEAR) {
    return {std::move(name), Kind::RANGE, {}, lo, hi, scale};
  }
  static Param int_range(std::string name, long lo, long hi) {
    return {std::move(name), Kind::INT_RANGE, {}, static_cast<double>(lo), static_cast<double>(hi), Scale::LINEAR};
  }

  void validate() const {
    if (name.empty()) throw ConfigError("search parameter needs a name");
    if (kind == Kind::SET && values.empty()) throw ConfigError("parameter '" + name + "' has an empty value set");
    if (kind != Kind::SET && !(lo < hi)) throw ConfigError("parameter '" + name + "' needs lo < hi");
    if (kind == Kind::RANGE && scale == Scale::LOG && !(lo > 0.0))
      throw ConfigError("log-scaled parameter '" + name + "' needs lo > 0");
  }

  nlohmann::json sample(Rng& rng) const {
    switch (kind) {
      case Kind::SET: return values[uniform_index(rng, values.size())];
      case Kind::RANGE: {
        const double u = uniform01(rng);
        if (scale == Scale::LOG) return std::exp(std::log(lo) + u * (std::log(hi) - std::log(lo)));
        return lo + u * (hi - lo);
      }
      case Kind::INT_RANGE:
        return static_cast<long>(lo) +
               static_cast<long>(uniform_index(rng, static_cast<std::size_t>(hi - lo) + 1));
    }
    return nullptr;
  }
};

/// Parameters kept sorted by name.
struct SearchSpace {
  std::vector<Param> params;

  SearchSpace() = default;
  SearchSpace(std::vector<Param> ps) : params(std::move(ps)) {
    std::stable_sort(params.begin(), params.end(), [](const Param& a, const Param& b) { return a.name < b.name; });
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i].validate();
      if (i > 0 && params[i].name == params[i - 1].name)
        throw ConfigError("duplicate search parameter '" + params[i].name + "'");
    }
  }

  bool finite() const {
    return std::all_of(params.begin(), params.end(), [](const Param& p) { return p.kind == Param::Kind::SET; });
  }

  /// Cartesian product; the first parameter by name varies slowest.
  std::vector<nlohmann::json> grid() const {
    if (params.empty()) throw ConfigError("empty search space");
    if (!finite()) throw ConfigError("grid search needs finite value sets for every parameter");
    std::vector<nlohmann::json> out{nlohmann::json::object()};
    for (const auto& p : params) {
      std::vector<nlohmann::json> next;
      next.reserve(out.size() * p.values.size());
      for (const auto& partial : out)
        for (const auto& v : p.values) {
          auto c = partial;
          c[p.name] = v;
          next.push_back(std::move(c));
        }
      out = std::move(next);
    }
    return out;
  }

  nlohmann::json sample(Rng& rng) const {
    nlohmann::json c = nlohmann::json::object();
    for (const auto& p : params) c[p.name] = p.sample(rng);
    return c;
  }
};

/// `{"name": {"values": [...]}}`, `{"name": {"range": [lo, hi], "scale": "log"}}`
/// or `{"name": {"int_range": [lo, hi]}}`.
inline SearchSpace search_space_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.empty()) throw ConfigError("search space must be a non-empty object");
  std::vector<Param> ps;
  for (const auto& [name, spec] : j.items()) {
    if (spec.contains("values")) {
      ps.push_back(Param::set(name, spec.at("values").get<std::vector<nlohmann::json>>()));
    } else if (spec.contains("range")) {
      const auto r = spec.at("range").get<std::vector<double>>();
      if (r.size() != 2) throw ConfigError("range for '" + name + "' needs two values");
      const auto scale = spec.value("scale", std::string("linear"));
      if (scale != "linear" && scale != "log") throw ConfigError("scale must be linear or log");
      ps.push_back(Param::range(name, r[0], r[1], scale == "log" ? Scale::LOG : Scale::LINEAR));
    } else if (spec.contains("int_range")) {
      const auto r = spec.at("int_range").get<std::vector<long>>();
      if (r.size() != 2) throw ConfigError("int_range for '" + name + "' needs two values");
      ps.push_back(Param::int_range(name, r[0], r[1]));
    } else {
      throw ConfigError("parameter '" + name + "' needs values, range or int_range");
    }
  }
  return SearchSpace(std::move(ps));
}

inline nlohmann::json to_json(const SearchSpace& s) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& p : s.params) {
    switch (p.kind) {
      case Param::Kind::SET: j[p.name] = {{"values", p.values}}; break;
      case Param::Kind::RANGE:
        j[p.name] = {{"range", {p.lo, p.hi}}, {"scale", p.scale == Scale::LOG ? "log" : "linear"}};
        break;
      case Param::Kind::INT_RANGE:
        j[p.name] = {{"int_range", {static_cast<long>(p.lo), static_cast<long>(p.hi)}}};
        break;
    }
  }
  return j;
}

inline SearchSpace linear_search_space() {
  return SearchSpace({Param::set("C", {0.01, 0.1, 1.0, 10.0}), Param::set("penalty", {"l1", "l2"})});
}

inline SearchSpace mlp_search_space() {
  return SearchSpace({Param::set("hidden_dim", {64, 128, 256}), Param::set("dropout", {0.1, 0.2, 0.3}),
                      Param::set("lr", {1e-3, 1e-4}), Param::set("batch_size", {32, 64}),
                      Param::set("linear_head", {false, true})});
}

inline SearchSpace cnn_search_space() {
  return SearchSpace({Param::int_range("n_layers", 1, 5), Param::range("expansion", 1.0, 4.0),
                      Param::set("rep_dim", {16, 32, 64, 128}), Param::set("batch_norm", {true, false}),
                      Param::range("lr", 1e-4, 1e-2, Scale::LOG), Param::set("batch_size", {16, 32, 64}),
                      Param::int_range("epochs", 10, 50)});
}

struct Trial {
  std::size_t index = 0;
  nlohmann::json config;
  double value = 0.0;
};

struct SearchResult {
  nlohmann::json best_config;
  double best_value = 0.0;
  std::size_t best_index = 0;
  std::vector<Trial> trials;  // in trial order
};

/// Validation metric for one configuration.
using Objective = std::function<double(const nlohmann::json& config, const DataHandle& train, const DataHandle& val)>;

inline nlohmann::json to_json(const Trial& t) {
  return {{"trial", t.index}, {"config", t.config}, {"value", t.value}};
}

namespace detail {

inline void check_handles(const DataHandle& train, const DataHandle& val) {
  if (train.partition != Partition::TRAIN) throw ConfigError("search training data must be the train partition");
  if (val.partition != Partition::VAL) throw ConfigError("search selection data must be the val partition");
}

/// Evaluates configs (optionally on several threads) and picks the best; ties
/// go to the lowest trial index.
inline SearchResult run_trials(const std::vector<nlohmann::json>& configs, const Objective& objective,
                               const DataHandle& train, const DataHandle& val, bool maximize, unsigned threads,
                               std::ostream* log) {
  std::vector<Trial> trials(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  auto work = [&](std::size_t i) {
    try {
      trials[i] = {i, configs[i], objective(configs[i], train, val)};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < configs.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < configs.size(); i += threads) work(i);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  SearchResult r;
  r.trials = std::move(trials);
  double best = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  bool found = false;
  for (const auto& t : r.trials) {
    if (log) *log << to_json(t).dump() << '\n';
    if (std::isnan(t.value)) continue;
    if (!found || (maximize ? t.value > best : t.value < best)) {
      best = t.value;
      r.best_index = t.index;
      found = true;
    }
  }
  if (!found) throw NumericalError("every trial produced NaN");
  r.best_value = best;
  r.best_config = r.trials[r.best_index].config;
  return r;
}

}  // namespace detail

inline SearchResult grid_search(const SearchSpace& space, const DataHandle& train, const DataHandle& val,
                                const Objective& objective, bool maximize = true, unsigned threads = 1,
                                std::ostream* log = nullptr) {
  detail::check_handles(train, val);
  return detail::run_trials(space.grid(), objective, train, val, maximize, threads, log);
}

/// Uniform sampling on sets and linear ranges, log-uniform on log ranges.
inline SearchResult random_search(const SearchSpace& space, std::size_t n_trials, std::uint64_t seed,
                                  const DataHandle& train, const DataHandle& val, const Objective& objective,
                                  bool maximize = true, unsigned threads = 1, std::ostream* log = nullptr) {
  detail::check_handles(train, val);
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
  if (space.params.empty()) throw ConfigError("empty search space");
  Rng rng(seed);
  std::vector<nlohmann::json> configs;
  configs.reserve(n_trials);
  for (std::size_t i = 0; i < n_trials; ++i) configs.push_back(space.sample(rng));
  return detail::run_trials(configs, objective, train, val, maximize, threads, log);
}

}  // namespace reformat
