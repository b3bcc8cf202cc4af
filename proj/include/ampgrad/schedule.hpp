#pragma once

#include <cctype>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "ampgrad/common.hpp"

namespace ampgrad {

// One schedule element (end_epoch, eta, beta, gamma): train with learning
// rate eta until end_epoch, amplifying a beta-ratio of eligible layers by
// gamma (beta = 0 disables amplification and gamma is ignored).
struct PhaseParams {
  int end_epoch = 0;
  double lr = 0.0;
  double beta = 0.0;
  double gamma = 1.0;

  bool amplified() const { return beta > 0.0; }
  bool operator==(const PhaseParams& o) const {
    return end_epoch == o.end_epoch && lr == o.lr && beta == o.beta && gamma == o.gamma;
  }
};

namespace detail {
inline std::string format_compact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}
// Ratio formatting used in schedule labels: always at least one decimal
// (S1_0.0, S1_1.0), minimal digits otherwise (S1_0.5, S2_0.5_0.35).
inline std::string format_ratio(double v) {
  std::string s = format_compact(v);
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos) s += ".0";
  return s;
}
}  // namespace detail

struct Schedule {
  std::vector<PhaseParams> phases;
  std::string label;  // derived on construction; sweeps may override

  int total_epochs() const { return phases.empty() ? 0 : phases.back().end_epoch; }
  int phase_count() const { return static_cast<int>(phases.size()); }
  // first epoch of phase i (1-based phase index)
  int phase_start(int phase_index) const {
    return phase_index <= 1 ? 1 : phases[static_cast<size_t>(phase_index - 2)].end_epoch + 1;
  }

  bool operator==(const Schedule& o) const { return phases == o.phases; }

  std::string to_text() const {
    std::string out = "[";
    for (size_t i = 0; i < phases.size(); ++i) {
      if (i) out += ",";
      out += "(" + std::to_string(phases[i].end_epoch) + "," + detail::format_compact(phases[i].lr) +
             "," + detail::format_compact(phases[i].beta) + "," +
             detail::format_compact(phases[i].gamma) + ")";
    }
    return out + "]";
  }
};

inline void validate_phases(const std::vector<PhaseParams>& phases) {
  if (phases.empty()) throw ParseError("schedule: needs at least one phase");
  int prev_end = 0;
  for (const auto& p : phases) {
    if (p.end_epoch <= prev_end)
      throw ParseError("schedule: end_epoch values must be strictly increasing (got " +
                       std::to_string(p.end_epoch) + " after " + std::to_string(prev_end) + ")");
    if (!(p.lr > 0.0)) throw ParseError("schedule: learning rate must be > 0");
    if (!(p.beta >= 0.0 && p.beta <= 1.0))
      throw ParseError("schedule: beta must be in [0,1], got " + detail::format_compact(p.beta));
    if (!(p.gamma >= 1.0))
      throw ParseError("schedule: gamma must be >= 1, got " + detail::format_compact(p.gamma));
    prev_end = p.end_epoch;
  }
}

// Canonical name per the S1/S2 convention: no amplified phase -> "baseline";
// amplification in the second phase only -> S1_{mm}; in the second and third
// -> S2_{mm}_{nn}; anything else falls back to the tuple text.
inline std::string derive_label(const std::vector<PhaseParams>& phases) {
  std::vector<size_t> amped;
  for (size_t i = 0; i < phases.size(); ++i)
    if (phases[i].amplified()) amped.push_back(i);
  if (amped.empty()) return "baseline";
  if (amped.size() == 1 && amped[0] == 1) return "S1_" + detail::format_ratio(phases[1].beta);
  if (amped.size() == 2 && amped[0] == 1 && amped[1] == 2)
    return "S2_" + detail::format_ratio(phases[1].beta) + "_" + detail::format_ratio(phases[2].beta);
  Schedule tmp{phases, ""};
  return tmp.to_text();
}

inline Schedule make_schedule(std::vector<PhaseParams> phases, std::string label = "") {
  validate_phases(phases);
  Schedule s;
  s.label = label.empty() ? derive_label(phases) : std::move(label);
  s.phases = std::move(phases);
  return s;
}

// Parses the tuple-list syntax: [(50,0.1,0,1),(100,0.1,0.5,2),...]
inline Schedule parse_schedule(const std::string& text) {
  size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  auto expect = [&](char c) {
    skip_ws();
    if (pos >= text.size() || text[pos] != c)
      throw ParseError("schedule: expected '" + std::string(1, c) + "' at position " +
                       std::to_string(pos) + " in \"" + text + "\"");
    ++pos;
  };
  auto number = [&]() -> double {
    skip_ws();
    size_t consumed = 0;
    double v;
    try {
      v = std::stod(text.substr(pos), &consumed);
    } catch (const std::exception&) {
      throw ParseError("schedule: expected a number at position " + std::to_string(pos) + " in \"" +
                       text + "\"");
    }
    pos += consumed;
    return v;
  };

  std::vector<PhaseParams> phases;
  expect('[');
  skip_ws();
  if (pos < text.size() && text[pos] == ']') {
    ++pos;
  } else {
    while (true) {
      expect('(');
      PhaseParams p;
      const double end_epoch = number();
      if (end_epoch != static_cast<int>(end_epoch) || end_epoch <= 0)
        throw ParseError("schedule: end_epoch must be a positive integer");
      p.end_epoch = static_cast<int>(end_epoch);
      expect(',');
      p.lr = number();
      expect(',');
      p.beta = number();
      expect(',');
      p.gamma = number();
      expect(')');
      phases.push_back(p);
      skip_ws();
      if (pos < text.size() && text[pos] == ',') {
        ++pos;
        continue;
      }
      break;
    }
    expect(']');
  }
  skip_ws();
  if (pos != text.size())
    throw ParseError("schedule: trailing characters at position " + std::to_string(pos));
  return make_schedule(std::move(phases));
}

struct EpochParams {
  double lr = 0.0;
  double beta = 0.0;
  double gamma = 1.0;
  int phase_index = 0;  // 1-based
};

// One row of training telemetry with full provenance.
struct MetricsRecord {
  int epoch = 0;
  int phase_index = 0;  // 1-based
  double lr = 0.0;
  double beta = 0.0;
  double gamma = 1.0;
  double train_loss = 0.0;
  double train_acc = 0.0;  // percent
  double test_acc = 0.0;   // percent
  double wall_ms = 0.0;
  uint64_t seed = 0;
};

// Parameters of the phase whose (prev_end, end] range contains epoch.
inline EpochParams lr_at_epoch(const Schedule& schedule, int epoch) {
  if (epoch < 1 || epoch > schedule.total_epochs())
    throw ArgumentError("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [1," +
                        std::to_string(schedule.total_epochs()) + "]");
  for (size_t i = 0; i < schedule.phases.size(); ++i) {
    if (epoch <= schedule.phases[i].end_epoch) {
      const auto& p = schedule.phases[i];
      return EpochParams{p.lr, p.beta, p.beta > 0 ? p.gamma : 1.0, static_cast<int>(i) + 1};
    }
  }
  throw StateError("lr_at_epoch: unreachable");
}

// ---------------------------------------------------------------------------
// Standard schedule shapes. "paper" is the full 150-epoch protocol; "desk" is
// the same shape compressed to 30 epochs for fast runs.
// ---------------------------------------------------------------------------
inline Schedule baseline_schedule(const std::string& scale = "desk") {
  if (scale == "paper")
    return make_schedule({{50, 0.1, 0, 1}, {100, 0.1, 0, 1}, {130, 0.01, 0, 1}, {150, 0.01, 0, 1}});
  if (scale == "desk")
    return make_schedule({{10, 0.1, 0, 1}, {20, 0.1, 0, 1}, {26, 0.01, 0, 1}, {30, 0.01, 0, 1}});
  throw ConfigError("unknown schedule scale '" + scale + "' (expected desk or paper)");
}

// True for the 4-phase baseline shape the S1/S2 sweeps modify.
inline bool has_step_shape(const Schedule& s) {
  return s.phase_count() == 4 && s.phases[0].lr == s.phases[1].lr &&
         s.phases[2].lr == s.phases[3].lr && s.phases[1].lr > s.phases[2].lr;
}

// S1_{mm}: amplification at ratio mm in the second phase only.
inline Schedule make_s1(const Schedule& base, double mm, double gamma = 2.0) {
  if (!has_step_shape(base))
    throw ConfigError("make_s1: base schedule does not have the 4-phase step shape");
  std::vector<PhaseParams> phases = base.phases;
  phases[1].beta = mm;
  phases[1].gamma = gamma;
  return make_schedule(std::move(phases), "S1_" + detail::format_ratio(mm));
}

// S2_{mm}_{nn}: ratio mm in the second phase, nn in the third, none in the last.
inline Schedule make_s2(const Schedule& base, double mm, double nn, double gamma = 2.0) {
  if (!has_step_shape(base))
    throw ConfigError("make_s2: base schedule does not have the 4-phase step shape");
  std::vector<PhaseParams> phases = base.phases;
  phases[1].beta = mm;
  phases[1].gamma = gamma;
  phases[2].beta = nn;
  phases[2].gamma = gamma;
  return make_schedule(std::move(phases),
                       "S2_" + detail::format_ratio(mm) + "_" + detail::format_ratio(nn));
}

// Same amplified phases, different factor; labelled <base-label>_g<gamma>.
inline Schedule with_gamma(const Schedule& s, double gamma) {
  if (!(gamma >= 1.0)) throw ConfigError("with_gamma: gamma must be >= 1");
  std::vector<PhaseParams> phases = s.phases;
  bool any = false;
  for (auto& p : phases)
    if (p.amplified()) {
      p.gamma = gamma;
      any = true;
    }
  if (!any) throw ConfigError("with_gamma: schedule '" + s.label + "' has no amplified phase");
  return make_schedule(std::move(phases), s.label + "_g" + detail::format_compact(gamma));
}

// Reconstructs the schedule a sweep label names, on the given base shape.
// Accepts "baseline", "S1_{mm}", "S2_{mm}_{nn}", each optionally suffixed
// with "_g{gamma}", or a raw tuple list.
inline Schedule schedule_from_label(const std::string& label, const Schedule& base) {
  if (label.empty()) throw ParseError("schedule label is empty");
  if (label.front() == '[') return parse_schedule(label);
  if (label == "baseline") return base;

  std::string body = label;
  std::optional<double> gamma;
  if (const size_t gpos = body.rfind("_g"); gpos != std::string::npos) {
    try {
      size_t used = 0;
      const double g = std::stod(body.substr(gpos + 2), &used);
      if (used == body.size() - gpos - 2) {
        gamma = g;
        body = body.substr(0, gpos);
      }
    } catch (const std::exception&) {
      // not a gamma suffix; fall through
    }
  }
  auto parse_tail = [&](const std::string& s, size_t from) {
    std::vector<double> vals;
    size_t p = from;
    while (p <= s.size()) {
      const size_t next = s.find('_', p);
      const std::string tok = s.substr(p, next == std::string::npos ? next : next - p);
      try {
        size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw ParseError("");
        vals.push_back(v);
      } catch (const std::exception&) {
        throw ParseError("cannot parse schedule label '" + label + "'");
      }
      if (next == std::string::npos) break;
      p = next + 1;
    }
    return vals;
  };

  Schedule out;
  if (body.rfind("S1_", 0) == 0) {
    const auto vals = parse_tail(body, 3);
    if (vals.size() != 1) throw ParseError("cannot parse schedule label '" + label + "'");
    out = make_s1(base, vals[0]);
  } else if (body.rfind("S2_", 0) == 0) {
    const auto vals = parse_tail(body, 3);
    if (vals.size() != 2) throw ParseError("cannot parse schedule label '" + label + "'");
    out = make_s2(base, vals[0], vals[1]);
  } else {
    throw ParseError("cannot parse schedule label '" + label + "'");
  }
  return gamma ? with_gamma(out, *gamma) : out;
}

}  // namespace ampgrad
