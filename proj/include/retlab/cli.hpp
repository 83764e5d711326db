#pragma once

// Command-line front end. Every subcommand is a function of the effective
// RunConfig: defaults, then the --config JSON file, then explicit flags.

#include <cstdint>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "retlab/avoidance.hpp"
#include "retlab/correlation.hpp"
#include "retlab/error.hpp"
#include "retlab/laplace.hpp"
#include "retlab/monte_carlo.hpp"
#include "retlab/numeric.hpp"
#include "retlab/psi_mixing.hpp"
#include "retlab/report.hpp"
#include "retlab/shift_core.hpp"

namespace retlab::cli {

using nlohmann::json;

struct RunConfig {
  std::string measure = "uniform:2";
  std::string pattern;
  std::string family;
  std::size_t l = 0;     // family member (list index for explicit families)
  std::size_t lmin = 0;  // 0: subcommand default
  std::size_t lmax = 0;
  std::size_t K = 4096;
  std::size_t K_exact = 4096;
  bool exact = false;
  std::vector<double> t_grid;  // empty: default grid
  double epsilon = 0;          // 0: schedule 1/l
  double tol = 1e-9;
  std::size_t N = 100000;
  std::uint64_t seed = 20240611;
  std::string kind = "return";
  std::size_t tail_k_max = 20;
  std::string observable;
  std::string observable_family = "indicator";
  std::string mode = "series";
  std::size_t psi_k_max = 256;
  unsigned jobs = 1;
  std::string format;  // empty: subcommand default
  std::string out;
  std::string samples_out;
};

namespace detail {

struct Field {
  std::string key;
  std::string flag;
  std::string help;
  std::function<CLI::Option*(CLI::App&, RunConfig&)> add;
  std::function<void(RunConfig&, const json&)> read;
  std::function<void(const RunConfig&, RunConfig&)> copy;
  std::function<json(const RunConfig&)> write;
};

template <class T>
void read_value(T& slot, const json& j, const std::string& key) {
  auto bad = [&](const char* what) {
    throw Error(ErrorCode::usage, "config key '" + key + "' must be " + what);
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) bad("a boolean");
    slot = j.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) bad("a string");
    slot = j.get<std::string>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!j.is_number()) bad("a number");
    slot = j.get<double>();
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    if (!j.is_array()) bad("an array of numbers");
    slot.clear();
    for (const auto& x : j) {
      if (!x.is_number()) bad("an array of numbers");
      slot.push_back(x.get<double>());
    }
  } else {
    if (!j.is_number_unsigned()) bad("a non-negative integer");
    slot = j.get<T>();
  }
}

template <class T>
Field field(std::string key, std::string flag, std::string help, T RunConfig::*member) {
  Field f;
  f.key = key;
  f.flag = "--" + flag;
  f.help = std::move(help);
  f.add = [member, flag = f.flag, h = f.help](CLI::App& app, RunConfig& c) -> CLI::Option* {
    if constexpr (std::is_same_v<T, bool>) {
      return app.add_flag(flag, c.*member, h);
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      return app.add_option(flag, c.*member, h)->delimiter(',');
    } else {
      return app.add_option(flag, c.*member, h);
    }
  };
  f.read = [member, key](RunConfig& c, const json& j) { read_value(c.*member, j, key); };
  f.copy = [member](const RunConfig& from, RunConfig& to) { to.*member = from.*member; };
  f.write = [member](const RunConfig& c) { return json(c.*member); };
  return f;
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all{
      field("measure", "measure", "uniform:Q | bernoulli:p0,p1,.. | markov:a,b;c,d", &RunConfig::measure),
      field("pattern", "pattern", "target word, e.g. 0110", &RunConfig::pattern),
      field("family", "family", "constant:S | periodic:W | fibonacci | champernowne | explicit:W1,W2", &RunConfig::family),
      field("l", "l", "family member length (list index for explicit families)", &RunConfig::l),
      field("lmin", "lmin", "first family length", &RunConfig::lmin),
      field("lmax", "lmax", "last family length", &RunConfig::lmax),
      field("K", "K", "series length", &RunConfig::K),
      field("K_exact", "K-exact", "largest K computed in rational arithmetic", &RunConfig::K_exact),
      field("exact", "exact", "rational output", &RunConfig::exact),
      field("t_grid", "t", "Laplace grid, comma separated", &RunConfig::t_grid),
      field("epsilon", "epsilon", "class parameter (default 1/l)", &RunConfig::epsilon),
      field("tol", "tol", "Laplace truncation tolerance", &RunConfig::tol),
      field("N", "N", "sample size", &RunConfig::N),
      field("seed", "seed", "RNG seed", &RunConfig::seed),
      field("kind", "kind", "hitting | return", &RunConfig::kind),
      field("tail_k_max", "tail-k-max", "largest k of the empirical tail", &RunConfig::tail_k_max),
      field("observable", "observable", "indicator:W | scaled:W:v | mixed:W:v | constant:v | @file.json",
            &RunConfig::observable),
      field("observable_family", "observable-family", "indicator | scaled:v | mixed:v", &RunConfig::observable_family),
      field("mode", "mode", "series | identity | sample | study", &RunConfig::mode),
      field("psi_k_max", "psi-k-max", "length of the psi profile", &RunConfig::psi_k_max),
      field("jobs", "jobs", "worker threads", &RunConfig::jobs),
      field("format", "format", "json | csv", &RunConfig::format),
      field("out", "out", "output path (default stdout)", &RunConfig::out),
      field("samples_out", "samples-out", "raw sample CSV path", &RunConfig::samples_out),
  };
  return all;
}

inline const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw std::logic_error("unknown field " + key);
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::usage, "cannot read '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::usage, "'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
  const json j = read_json_file(path);
  require(j.is_object(), ErrorCode::usage, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const Field* match = nullptr;
    for (const auto& f : fields())
      if (f.key == key) match = &f;
    require(match != nullptr, ErrorCode::usage, "unknown config key '" + key + "'");
    match->read(c, value);
  }
}

inline void validate(const RunConfig& c) {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorCode::usage, msg); };
  check(c.format.empty() || c.format == "json" || c.format == "csv", "format must be json or csv");
  check(c.kind == "hitting" || c.kind == "return", "kind must be hitting or return");
  check(c.mode == "series" || c.mode == "identity" || c.mode == "sample" || c.mode == "study",
        "mode must be series, identity, sample or study");
  check(c.K >= 1, "K must be positive");
  check(c.N >= 1, "N must be positive");
  check(c.tol > 0, "tol must be positive");
  check(c.epsilon >= 0 && c.epsilon < 1, "epsilon must lie in [0, 1)");
  check(c.jobs >= 1, "jobs must be positive");
  for (double t : c.t_grid) check(t > 0 && std::isfinite(t), "t values must be positive");
  check(c.lmin == 0 || c.lmax == 0 || c.lmin <= c.lmax, "lmin exceeds lmax");
}

struct Context {
  RunConfig config;
  std::vector<std::string> keys;  // fields echoed into the report
  std::string default_format;

  [[nodiscard]] std::string format() const { return config.format.empty() ? default_format : config.format; }
  [[nodiscard]] json echo() const {
    json j = json::object();
    for (const auto& k : keys) j[k] = find_field(k).write(config);
    return j;
  }
  [[nodiscard]] Measure measure() const { return Measure::parse(config.measure); }
  [[nodiscard]] std::vector<double> grid() const { return config.t_grid.empty() ? default_t_grid() : config.t_grid; }
  [[nodiscard]] double epsilon_for(std::size_t l) const {
    return config.epsilon > 0 ? config.epsilon : 1.0 / static_cast<double>(l);
  }

  [[nodiscard]] Pattern pattern(const Measure& m) const {
    if (!config.pattern.empty()) {
      require(config.family.empty(), ErrorCode::usage, "give either --pattern or --family with --l");
      auto p = Pattern::parse(config.pattern);
      for (auto s : p.symbols())
        require(s < m.q(), ErrorCode::alphabet_mismatch, "pattern symbol outside the measure alphabet");
      return p;
    }
    require(!config.family.empty() && config.l > 0, ErrorCode::usage, "need --pattern, or --family with --l");
    const auto fam = PatternFamily::parse(config.family, config.l, config.l);
    return family_member(fam, config.l, m.q());
  }

  struct Range {
    PatternFamily family;
    std::size_t lo = 0;
    std::size_t hi = 0;
  };
  [[nodiscard]] Range range(std::string default_family, std::size_t lo, std::size_t hi) const {
    const std::string name = config.family.empty() ? default_family : config.family;
    require(!name.empty(), ErrorCode::usage, "need --family");
    std::size_t a = config.lmin, b = config.lmax;
    auto probe = PatternFamily::parse(name, 1, 1);
    if (probe.kind == FamilyKind::explicit_list) {
      if (b == 0) b = probe.max_length;
      if (config.lmin == 0 && config.lmax == 0) a = 0;
    } else {
      if (b == 0) b = hi;
      if (a == 0) a = std::min(lo, b);
    }
    require(a <= b, ErrorCode::usage, "empty length range");
    return {PatternFamily::parse(name, a, b), a, b};
  }
};

inline void emit(const Context& ctx, std::ostream& out, json j, const CsvTable& table) {
  if (ctx.format() == "json") {
    j["config"] = ctx.echo();
    write_json(out, j);
  } else {
    table.write(out);
  }
}

inline CsvTable with_echo(const Context& ctx, std::vector<std::string> header) {
  CsvTable t(std::move(header));
  t.comment("config " + ctx.echo().dump());
  return t;
}

// ---- subcommands -------------------------------------------------------

inline void cmd_sweepout(const Context& ctx, std::ostream& out) {
  const auto& c = ctx.config;
  const auto m = ctx.measure();
  const auto p = ctx.pattern(m);
  SweepoutOptions so;
  so.K = c.K + 1;  // one extra term gives the return tail at k = K
  so.exact = c.exact;
  so.K_exact = c.K_exact;
  if (c.exact) {
    require(so.K <= c.K_exact, ErrorCode::budget_exceeded,
            "exact output needs K + 1 <= K_exact (" + std::to_string(c.K_exact) + ")");
  }
  const auto s = sweepout_series(p, m, so);
  const auto d = distributions(s);
  auto table = with_echo(ctx, {"k", "s_tilde", "hitting_tail", "return_tail", "c_k"});
  json rows = json::array();
  for (std::size_t k = 0; k <= c.K; ++k) {
    if (c.exact) {
      table.row(k, s.exact[k], d.hitting_tail_exact[k], d.return_tail_exact[k], d.c_exact[k]);
      rows.push_back({{"k", k},
                      {"s_tilde", to_string(s.exact[k])},
                      {"hitting_tail", to_string(d.hitting_tail_exact[k])},
                      {"return_tail", to_string(d.return_tail_exact[k])},
                      {"c_k", to_string(d.c_exact[k])}});
    } else {
      table.row(k, s.value[k], d.hitting_tail[k], d.return_tail[k], d.c[k]);
      rows.push_back({{"k", k},
                      {"s_tilde", s.value[k]},
                      {"hitting_tail", d.hitting_tail[k]},
                      {"return_tail", d.return_tail[k]},
                      {"c_k", d.c[k]}});
    }
  }
  json j{{"pattern", p.str()}, {"l", p.length()}, {"K", c.K}, {"exact", c.exact}, {"rows", rows}};
  if (c.exact) {
    j["mu"] = to_string(s.mu.exact);
  } else {
    j["mu"] = s.mu.value;
  }
  emit(ctx, out, j, table);
}

inline void escape_row(CsvTable& t, const EscapeRateReport& r) {
  t.row(r.l, r.mu_A, r.rho, r.ratio, r.sup_dev_exp, r.sup_dev_mu);
}

inline void cmd_escape(const Context& ctx, std::ostream& out) {
  const auto& c = ctx.config;
  const auto m = ctx.measure();
  auto table = with_echo(ctx, {"l", "mu", "rho", "ratio", "sup_dev_exp", "sup_dev_mu"});
  if (!c.pattern.empty() || c.l > 0) {
    const auto r = escape_rate(ctx.pattern(m), m, c.K);
    escape_row(table, r);
    emit(ctx, out, to_json(r), table);
    return;
  }
  const auto range = ctx.range("", 8, 20);
  RatioStudyOptions opt;
  opt.K = c.K;
  opt.jobs = c.jobs;
  const auto study = ratio_study(range.family, m, range.lo, range.hi, opt);
  for (const auto& r : study.rows) escape_row(table, r);
  if (study.periodic) {
    const auto& p = *study.periodic;
    table.footer("periodic_limit m=" + cell(p.m) + " measured=" + cell(p.measured) + " closed_form=" +
                 cell(p.closed) + " stated=" + cell(p.stated) + " discrepancy=" + cell(p.discrepancy));
  }
  emit(ctx, out, to_json(study), table);
}

inline LaplaceOptions laplace_options(const RunConfig& c) {
  LaplaceOptions o;
  o.tol = c.tol;
  return o;
}

inline void cmd_laplace(const Context& ctx, std::ostream& out) {
  const auto& c = ctx.config;
  const auto m = ctx.measure();
  std::vector<LaplaceReport> reports;
  if (!c.pattern.empty() || c.l > 0) {
    reports.push_back(laplace_report(ctx.pattern(m), m, ctx.grid(), laplace_options(c)));
  } else {
    const auto range = ctx.range("fibonacci", 8, 16);
    CriterionOptions opt;
    opt.laplace = laplace_options(c);
    opt.jobs = c.jobs;
    reports = criterion_report(range.family, m, range.lo, range.hi, ctx.grid(), opt);
  }
  auto table = with_echo(ctx, {"l", "mu", "t", "series_value", "target", "deviation", "K_used", "tail_bound",
                               "phi_return", "phi_hitting"});
  json j = json::object();
  j["reports"] = json::array();
  for (const auto& r : reports) {
    for (const auto& p : r.points)
      table.row(r.l, r.mu, p.t, p.series_value, p.target, p.deviation, p.K_used, p.tail_bound, p.phi_return,
                p.phi_hitting);
    table.footer("l=" + cell(r.l) + " sup_deviation=" + cell(r.sup_deviation) + " c_tilde_sup=" +
                 cell(r.c_tilde_sup) + " sup_c=" + cell(r.sup_c) + " hsv_ok=" + cell(r.hsv_ok));
    j["reports"].push_back(to_json(r));
  }
  if (!reports.empty()) j["sup_deviation_last"] = reports.back().sup_deviation;
  emit(ctx, out, j, table);
}

inline void membership_row(CsvTable& t, const ClassMembership& c) {
  t.row(c.n_A, c.pattern, c.epsilon, c.ell_A, c.w_A, c.cond1, c.cond2, c.cond3, c.cond3_value, c.q_A, c.member,
        c.reason);
}

inline const std::vector<std::string> kMembershipHeader{"l",     "pattern", "epsilon",     "ell_A",
                                                        "w_A",   "cond1",   "cond2",       "cond3",
                                                        "cond3_value", "q_A", "member",    "reason"};

inline void cmd_classify(const Context& ctx, std::ostream& out) {
  const auto& c = ctx.config;
  const auto m = ctx.measure();
  const auto profile = psi_profile(m, c.psi_k_max);
  auto table = with_echo(ctx, kMembershipHeader);
  if (!c.pattern.empty() || c.l > 0) {
    const auto p = ctx.pattern(m);
    const auto r = classify(p, m, ctx.epsilon_for(p.length()), profile);
    membership_row(table, r);
    emit(ctx, out, to_json(r), table);
    return;
  }
  const auto range = ctx.range("", 8, 20);
  json rows = json::array();
  for (std::size_t n = range.lo; n <= range.hi; ++n) {
    const auto p = family_member(range.family, n, m.q());
    const auto r = classify(p, m, ctx.epsilon_for(p.length()), profile);
    membership_row(table, r);
    rows.push_back(to_json(r));
  }
  emit(ctx, out, {{"family", range.family.name()}, {"rows", rows}}, table);
}

inline json to_json(const StepCheck& s) {
  return {{"checked", s.checked}, {"holds", s.holds}, {"worst_slack", s.worst_slack}};
}

inline void cmd_bounds(const Context& ctx, std::ostream& out) {
  const auto& c = ctx.config;
  const auto m = ctx.measure();
  const auto p = ctx.pattern(m);
  const auto membership = classify(p, m, ctx.epsilon_for(p.length()), psi_profile(m, c.psi_k_max));
  SweepoutOptions so;
  so.K = c.K;
  so.exact = c.exact;
  so.K_exact = c.K_exact;
  const auto series = sweepout_series(p, m, so);
  const auto upper = rho_upper(membership, &series);
  const auto lower = rho_lower_best(membership, &series).best;
  EscapeOptions eo;
  eo.deviations = false;
  const double rho = escape_rate(p, m, series, eo).rho;
  const bool inside = lower.bound <= rho && rho <= upper.bound;
  json j{{"pattern", p.str()},
         {"membership", retlab::to_json(membership)},
         {"rho", rho},
         {"upper", {{"bound", upper.bound}, {"q_A", upper.q_A}, {"w_A", upper.w_A}, {"upperexp", to_json(upper.upperexp)}}},
         {"lower",
          {{"k", lower.k},
           {"bound", lower.bound},
           {"bracket", lower.bracket},
           {"vacuous", lower.vacuous},
           {"lowerexp", to_json(lower.lowerexp)}}},
         {"in_sandwich", inside}};
  auto table = with_echo(ctx, {"l", "epsilon", "lower", "lower_k", "rho", "upper", "in_sandwich", "upperexp_holds",
                               "lowerexp_holds"});
  table.row(p.length(), membership.epsilon, lower.bound, lower.k, rho, upper.bound, inside, upper.upperexp.holds,
            lower.lowerexp.holds);
  emit(ctx, out, j, table);
}

inline void cmd_rholim(const Context& ctx, std::ostream& out) {
  const auto& c = ctx.config;
  const auto m = ctx.measure();
  const auto range = ctx.range("fibonacci", 8, 20);
  RholimOptions opt;
  opt.K = c.K;
  opt.psi_k_max = c.psi_k_max;
  opt.jobs = c.jobs;
  const auto study = rholim_study(range.family, m, range.lo, range.hi, opt);
  auto table = with_echo(ctx, {"l", "epsilon", "mu", "rho", "lower", "upper", "ratio", "member", "in_sandwich",
                               "oscillation", "reason"});
  for (const auto& r : study.rows)
    table.row(r.l, r.epsilon, r.mu, r.rho, r.lower, r.upper, r.ratio, r.member, r.in_sandwich, r.oscillation,
              r.reason);
  table.footer("sandwich_ok=" + cell(study.sandwich_ok) + " gap_decreasing=" + cell(study.gap_decreasing) +
               " final_gap=" + cell(study.final_gap));
  emit(ctx, out, retlab::to_json(study), table);
}

inline SampleOptions sample_options(const Context& ctx) {
  const auto& c = ctx.config;
  SampleOptions o;
  o.N = c.N;
  o.seed = c.seed;
  o.jobs = c.jobs;
  o.tail_k_max = c.tail_k_max;
  o.keep_samples = !c.samples_out.empty();
  o.t_grid = ctx.grid();
  return o;
}

inline void write_samples(const Context& ctx, const SampleStats& s) {
  if (ctx.config.samples_out.empty()) return;
  std::ofstream f(ctx.config.samples_out);
  require(f.good(), ErrorCode::usage, "cannot write '" + ctx.config.samples_out + "'");
  CsvTable t({"index", "tau"});
  for (std::size_t i = 0; i < s.samples.size(); ++i) t.row(i, std::to_string(s.samples[i]));
  t.footer("tau = 0 marks a trajectory stopped at the step cap " + std::to_string(s.cap));
  t.write(f);
}

inline void sampled_tail_report(const Context& ctx, std::ostream& out, const SampleStats& s,
                                const std::vector<double>& exact, json extra) {
  const auto cmp = compare_tails(s, exact);
  json j = retlab::to_json(s);
  j.erase("samples");
  j["exact_tail"] = std::vector<double>(exact.begin(), exact.begin() + static_cast<std::ptrdiff_t>(cmp.k_max + 1));
  j["tails_within_band"] = cmp.within;
  j["tail_worst_excess"] = cmp.worst_excess;
  for (auto& [k, v] : extra.items()) j[k] = v;
  auto table = with_echo(ctx, {"k", "empirical_tail", "exact_tail", "band"});
  const double n = static_cast<double>(s.used);
  for (std::size_t k = 0; k <= cmp.k_max; ++k) {
    const double p = exact[k];
    table.row(k, s.tail[k], p, 3 * std::sqrt(p * (1 - p) / n) + 1e-6);
  }
  table.footer("ks=" + cell(s.ks) + " kac_product=" + cell(s.kac_product) + " kac_sigma=" + cell(s.kac_sigma) +
               " used=" + cell(s.used) + " capped=" + cell(s.capped) + " tails_within_band=" + cell(cmp.within));
  write_samples(ctx, s);
  emit(ctx, out, j, table);
}

inline void cmd_mc(const Context& ctx, std::ostream& out) {
  const auto& c = ctx.config;
  const auto m = ctx.measure();
  const auto p = ctx.pattern(m);
  const auto opt = sample_options(ctx);
  SweepoutOptions so;
  so.K = c.tail_k_max + 1;
  const auto series = sweepout_series(p, m, so);
  if (c.kind == "hitting") {
    const auto s = sample_hitting(m, p, opt);
    sampled_tail_report(ctx, out, s, series.value, json::object());
  } else {
    const auto s = sample_return(m, p, opt);
    sampled_tail_report(ctx, out, s, distributions(series).return_tail, {{"kac_ok", kac_ok(s)}});
  }
}

inline Observable observable(const Context& ctx, unsigned q) {
  const auto& spec = ctx.config.observable;
  require(!spec.empty(), ErrorCode::usage, "need --observable");
  if (spec.front() == '@') return Observable::from_json(read_json_file(spec.substr(1)), q);
  return Observable::parse(spec, q);
}

inline void cmd_tauf(const Context& ctx, std::ostream& out) {
  const auto& c = ctx.config;
  const auto m = ctx.measure();
  if (c.mode == "study") {
    const auto range = ctx.range("fibonacci", 8, 16);
    CriterionOptions opt;
    opt.laplace = laplace_options(c);
    opt.jobs = c.jobs;
    const auto study =
        tauf_limit_study(range.family, TaufFamily::parse(c.observable_family), m, range.lo, range.hi, ctx.grid(), opt);
    auto table = with_echo(ctx, {"l", "pattern", "eps", "one_measure", "hypothesis_ratio", "sup_deviation",
                                 "hitting_sup", "return_sup"});
    for (const auto& r : study.rows)
      table.row(r.l, r.pattern, r.eps, r.one_measure, r.hypothesis_ratio, r.sup_deviation, r.hitting_sup,
                r.return_sup);
    emit(ctx, out, retlab::to_json(study), table);
    return;
  }
  const auto f = observable(ctx, m.q());
  if (c.mode == "identity") {
    const auto id = tauf_identity_check(f, m, c.K);
    json j{{"observable", f.to_json()},
           {"K", id.K},
           {"worst_residual", to_string(id.worst_residual)},
           {"zero", id.zero},
           {"k0_consistent", id.k0_consistent}};
    auto table = with_echo(ctx, {"K", "worst_residual", "zero", "k0_consistent"});
    table.row(id.K, id.worst_residual, id.zero, id.k0_consistent);
    emit(ctx, out, j, table);
    return;
  }
  if (c.mode == "sample") {
    const bool conditioned = c.kind == "return";
    const auto s = sample_tauf(m, f, conditioned, sample_options(ctx));
    std::vector<double> exact;
    if (conditioned) {
      TaufStream stream(f, m, retlab::detail::TaufStart::on_support);
      for (std::size_t k = 0; k <= c.tail_k_max; ++k) exact.push_back(std::exp(stream.next_log()));
    } else {
      exact = float_tauf_series(f, m, c.tail_k_max).value;
    }
    sampled_tail_report(ctx, out, s, exact, json::object());
    return;
  }
  auto table = with_echo(ctx, {"k", "s_tilde_f"});
  json rows = json::array();
  json j{{"observable", f.to_json()}, {"K", c.K}, {"exact", c.exact}};
  if (c.exact) {
    require(c.K <= c.K_exact, ErrorCode::budget_exceeded,
            "exact output needs K <= K_exact (" + std::to_string(c.K_exact) + ")");
    const auto s = exact_tauf_series(f, m, c.K);
    for (std::size_t k = 0; k <= c.K; ++k) {
      table.row(k, s[k]);
      rows.push_back({{"k", k}, {"s_tilde_f", to_string(s[k])}});
    }
    j["eps"] = to_string(f.support_measure(m));
  } else {
    const auto s = float_tauf_series(f, m, c.K);
    for (std::size_t k = 0; k <= c.K; ++k) {
      table.row(k, s.value[k]);
      rows.push_back({{"k", k}, {"s_tilde_f", s.value[k]}});
    }
    j["eps"] = s.eps;
  }
  j["rows"] = rows;
  emit(ctx, out, j, table);
}

struct LedgerEntry {
  std::string id;
  std::string claim;
  std::string measured;
  std::string resolution;
  std::string reproduce;
};

inline const std::vector<LedgerEntry>& ledger_entries() {
  static const std::vector<LedgerEntry> entries{
      {"sweepout-index", "s~(k) = q^{-k-l} f_A(k+l)",
       "s~(k) = q^{-(k+l-1)} f_A(k+l-1); for A=0, k=1 the first form gives 1/4, enumeration gives 1/2",
       "the enumeration-verified shift is used; escape rates are unaffected",
       "retlab sweepout --pattern 0 --K 3 --exact"},
      {"escape-rate-11", "rho = log 2 - log phi = 0.2131301 for A = 11 under uniform:2",
       "log 2 - log phi = 0.2119354; closed form, spectral radius and tail fit agree to 1e-12",
       "the formula is asserted, the decimal is not", "retlab escape --pattern 11"},
      {"periodic-limit", "rho/mu tends to 1 + q^{-m} along prefixes of a period-m point",
       "rho/mu tends to 1 - q^{-m} (0.5 for constant:0, q = 2)",
       "the measured constant is reported next to the claimed one with a discrepancy flag",
       "retlab escape --family constant:0 --lmin 8 --lmax 20 --format csv"},
      {"phi-return-single-symbol", "phi_return(t=1) = 0.438915 for A = 0 under uniform:2",
       "0.435261 from both the sweep-out formula and the direct sum of 2^{-k} e^{-k/2}",
       "the two forms are compared with each other; the quoted number is not asserted",
       "retlab laplace --pattern 0 --t 1 --format json"},
      {"ks-single-symbol", "KS distance of the scaled law for A = 0 is about 0.11",
       "1 - e^{-1/2} = 0.3935, attained just below t = 1/2", "only the qualitative bound ks > 0.05 is asserted",
       "retlab mc --pattern 0 --kind hitting"},
      {"laplace-monotone", "sup deviation from t/(t+1) decreases along Fibonacci prefixes l = 8..16",
       "not monotone: the deviation rises at several lengths and plateaus near 1e-3 from l = 12",
       "decrease between endpoints and the 0.02 bound hold; the monotone clause is reported failing",
       "retlab laplace --family fibonacci --lmin 8 --lmax 16 --t 0.25,0.5,1,2,4 --format csv"},
      {"rholim-monotone", "|rho/mu - 1| decreases along Fibonacci prefixes l = 8..20",
       "not monotone (1.0e-2 at l = 8, 3.0e-2 at l = 11, 1.6e-3 at l = 12, 1.1e-4 at l = 20)",
       "the sandwich and the final 1e-3 bound hold; the monotone clause is reported failing",
       "retlab rholim --family fibonacci --lmin 8 --lmax 20"},
      {"mixed-observable", "the Laplace deviation decreases for the mixed observable family",
       "mu(f = 1)/mu(supp f) = 1/2 for every length and the deviation plateaus near 0.17",
       "ratio and deviation are reported; no decrease is asserted",
       "retlab tauf --mode study --observable-family mixed:1/8 --lmin 6 --lmax 14 --format csv"},
      {"sandwich-epsilon", "sandwich bounds at epsilon = 0.1 for a trivially correlated word",
       "the bounds need epsilon < 0.1; at epsilon = 0.1 they are rejected",
       "the example is evaluated at epsilon = 0.099", "retlab bounds --pattern 0000000001 --epsilon 0.099"},
  };
  return entries;
}

inline void cmd_ledger(const Context& ctx, std::ostream& out) {
  auto table = with_echo(ctx, {"id", "claim", "measured", "resolution", "reproduce"});
  json j = json::array();
  for (const auto& e : ledger_entries()) {
    table.row(e.id, e.claim, e.measured, e.resolution, e.reproduce);
    j.push_back({{"id", e.id},
                 {"claim", e.claim},
                 {"measured", e.measured},
                 {"resolution", e.resolution},
                 {"reproduce", e.reproduce}});
  }
  emit(ctx, out, {{"entries", j}}, table);
}

struct Command {
  std::string name;
  std::string help;
  std::string default_format;
  std::vector<std::string> keys;
  std::function<void(const Context&, std::ostream&)> run;
};

inline const std::vector<Command>& commands() {
  static const std::vector<Command> all{
      {"sweepout", "sweep-out series and hitting/return distributions", "csv",
       {"measure", "pattern", "family", "l", "K", "K_exact", "exact"}, cmd_sweepout},
      {"escape", "escape rate report for a pattern or a family", "json",
       {"measure", "pattern", "family", "l", "lmin", "lmax", "K", "jobs"}, cmd_escape},
      {"laplace", "Laplace criterion report", "csv",
       {"measure", "pattern", "family", "l", "lmin", "lmax", "t_grid", "tol", "jobs"}, cmd_laplace},
      {"classify", "class membership", "json",
       {"measure", "pattern", "family", "l", "lmin", "lmax", "epsilon", "psi_k_max"}, cmd_classify},
      {"bounds", "escape rate sandwich for one pattern", "json",
       {"measure", "pattern", "family", "l", "epsilon", "K", "K_exact", "exact", "psi_k_max"}, cmd_bounds},
      {"rholim", "rho/mu ratio table with sandwich bounds", "csv",
       {"measure", "family", "lmin", "lmax", "K", "psi_k_max", "jobs"}, cmd_rholim},
      {"mc", "Monte Carlo hitting or return times", "json",
       {"measure", "pattern", "family", "l", "kind", "N", "seed", "tail_k_max", "t_grid", "jobs", "samples_out"},
       cmd_mc},
      {"tauf", "generalized hitting time of an observable", "json",
       {"measure", "mode", "observable", "observable_family", "family", "lmin", "lmax", "K", "K_exact", "exact",
        "t_grid", "tol", "kind", "N", "seed", "tail_k_max", "jobs", "samples_out"},
       cmd_tauf},
      {"ledger", "known differences between claimed and measured values", "csv", {}, cmd_ledger},
  };
  return all;
}

inline void report_error(std::ostream& err, ErrorCode code, const std::string& message, json extra = {}) {
  json j{{"error", {{"code", std::string(code_name(code))}, {"message", message}}}};
  for (auto& [k, v] : extra.items()) j["error"][k] = v;
  err << j.dump() << '\n';
}

inline int exit_code(ErrorCode code) {
  return code == ErrorCode::budget_exceeded || code == ErrorCode::series_too_short ? 2 : 1;
}

}  // namespace detail

/// Exit status: 0 success, 1 usage or input error, 2 computation budget exceeded.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  using namespace detail;
  CLI::App app{"retlab: return and hitting time statistics of shrinking cylinders"};
  app.require_subcommand(1);
  RunConfig flags;
  std::string config_path;
  struct Bound {
    const Command* command;
    CLI::App* app;
    std::vector<std::pair<const Field*, CLI::Option*>> options;
  };
  std::vector<Bound> bound;
  for (const auto& cmd : commands()) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    Bound b{&cmd, sub, {}};
    sub->add_option("--config", config_path, "JSON config file; flags override it");
    std::vector<std::string> keys = cmd.keys;
    keys.insert(keys.end(), {"format", "out"});
    for (const auto& key : keys) {
      const auto& f = find_field(key);
      b.options.emplace_back(&f, f.add(*sub, flags));
    }
    bound.push_back(std::move(b));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    report_error(err, ErrorCode::usage, e.what());
    return 1;
  }

  const Bound* chosen = nullptr;
  for (const auto& b : bound)
    if (b.app->parsed()) chosen = &b;

  try {
    Context ctx;
    ctx.keys = chosen->command->keys;
    ctx.default_format = chosen->command->default_format;
    if (!config_path.empty()) apply_config_file(ctx.config, config_path);
    for (const auto& [f, opt] : chosen->options)
      if (opt->count() > 0) f->copy(flags, ctx.config);
    validate(ctx.config);
    std::ostringstream buffer;
    chosen->command->run(ctx, buffer);
    if (ctx.config.out.empty()) {
      out << buffer.str();
    } else {
      std::ofstream file(ctx.config.out);
      require(file.good(), ErrorCode::usage, "cannot write '" + ctx.config.out + "'");
      file << buffer.str();
    }
    return 0;
  } catch (const SeriesTooShort& e) {
    report_error(err, e.code(), e.what(), {{"required_k", e.required_k()}});
    return exit_code(e.code());
  } catch (const Error& e) {
    report_error(err, e.code(), e.what());
    return exit_code(e.code());
  } catch (const std::bad_alloc&) {
    report_error(err, ErrorCode::budget_exceeded, "out of memory");
    return 2;
  } catch (const std::exception& e) {
    report_error(err, ErrorCode::invalid_argument, e.what());
    return 1;
  }
}

}  // namespace retlab::cli
