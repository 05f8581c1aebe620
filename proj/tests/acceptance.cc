// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance 1 3 9      a subset
//
// Criteria 5-8 train on the desk MNIST subset (configs/mnist_desk_*.json) and
// take tens of minutes on one core. Run outputs land in
// $FEDFOCAL_ACCEPTANCE_OUT (default ./acceptance_out) for inspection.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fedfocal/config.h"
#include "fedfocal/data.h"
#include "fedfocal/errors.h"
#include "fedfocal/federation.h"
#include "fedfocal/losses.h"
#include "fedfocal/metrics.h"
#include "oracles.h"
#include "reference_fedavg.h"

using namespace fedfocal;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kSource = FEDFOCAL_SOURCE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

fs::path out_root() {
  const char* env = std::getenv("FEDFOCAL_ACCEPTANCE_OUT");
  return env ? fs::path(env) : fs::path("acceptance_out");
}

// ---- 1: γ = 0 focal is cross-entropy ----

Outcome loss_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1e-6, 1.0);
  double worst = 0.0;
  loss::LossSpec focal0{loss::Family::kFocal, 0.0, {}};
  for (int i = 0; i < 100000; ++i) {
    const std::size_t classes = 2 + rng() % 9;
    std::vector<double> p(classes);
    double sum = 0.0;
    for (auto& v : p) sum += (v = u(rng));
    for (auto& v : p) v /= sum;
    const std::size_t label = rng() % classes;
    focal0.alpha.assign(classes, 1.0);
    const double fl = loss::multiclass_focal(p, label, focal0);
    worst = std::max(worst, std::abs(fl - (-std::log(p[label]))));
    const loss::PosteriorProb pt(p[label]);
    worst = std::max(worst, std::abs(loss::focal(pt, 0.0) - loss::bce(pt)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-15 && secs < 1.0,
          "max |FL(γ=0) − CE| = " + fmt("%.3g", worst) + " over 1e5 draws, " + fmt("%.2f s", secs)};
}

// ---- 2: analytic gradients vs central differences ----

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.5);
  double worst = 0.0;
  for (double gamma : {0.0, 0.5, 1.0, 2.0, 5.0}) {
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t classes = 2 + trial % 9;
      std::vector<double> z(classes);
      for (auto& v : z) v = n(rng);
      const std::size_t label = trial % classes;
      loss::LossSpec spec{loss::Family::kFocal, gamma, {}};
      const auto g = loss::focal_grad_logits(oracle::softmax(z), label, spec);
      for (std::size_t j = 0; j < classes; ++j) {
        auto f = [&](double x) {
          auto zz = z;
          zz[j] = x;
          return oracle::focal(oracle::softmax(zz)[label], gamma);
        };
        worst = std::max(worst, oracle::rel_err(g[j], oracle::central_diff(f, z[j])));
      }
      // sigmoid head
      const double x = n(rng);
      const int y = trial % 2 ? 1 : -1;
      auto fb = [&](double xx) {
        const double p = oracle::sigmoid(xx);
        return oracle::focal(y == 1 ? p : 1.0 - p, gamma);
      };
      const double gb = loss::binary_focal_grad_logit(oracle::sigmoid(x), y, gamma);
      worst = std::max(worst, oracle::rel_err(gb, oracle::central_diff(fb, x)));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 5.0,
          "max relative error " + fmt("%.3g", worst) + " (softmax + sigmoid, γ ∈ {0,0.5,1,2,5}, 1000 draws each), " +
              fmt("%.2f s", secs)};
}

// ---- 3: selection algebra ----

Outcome sampler_algebra() {
  using namespace federation;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(3);
  std::size_t rounds = 0, violations = 0;
  while (rounds < 10000) {
    const std::size_t n = 1 + rng() % 40;
    const std::size_t k = 1 + rng() % n;
    const std::size_t twentieths = rng() % 21;
    const std::size_t cap = twentieths * k / 20;
    auto sel = initial_selection(make_sampler(static_cast<double>(twentieths) / 20.0, k, n, rng()));
    std::map<ClientId, double> last;
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int r = 0; r < 10 && rounds < 10000; ++r, ++rounds) {
      const auto prev = sel.state.prev_selected;
      std::map<ClientId, ValidationDelta> d;
      for (auto id : prev) {
        ValidationDelta delta;
        if (auto it = last.find(id); it != last.end()) delta.prev_loss = it->second;
        delta.new_loss = u(rng);
        last[id] = delta.new_loss;
        d[id] = delta;
      }
      sel = select_clients(sel.state, d);
      const auto& a = sel.audit;
      const std::set<ClientId> ci(prev.begin(), prev.end()), v(a.improved.begin(), a.improved.end());
      bool ok = std::all_of(v.begin(), v.end(), [&](ClientId x) { return ci.contains(x); });
      ok = ok && std::all_of(a.carried.begin(), a.carried.end(), [&](ClientId x) { return v.contains(x); });
      ok = ok && a.carried.size() <= cap;
      std::set<ClientId> uni(a.carried.begin(), a.carried.end());
      for (auto id : a.filler) ok = ok && uni.insert(id).second;
      ok = ok && uni == std::set<ClientId>(sel.next.begin(), sel.next.end());
      ok = ok && sel.next.size() == k && uni.size() == k;
      violations += !ok;
    }
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && secs < 5.0,
          std::to_string(violations) + " violations of V^c ⊆ V ⊆ C_i, |V^c| ≤ ⌊ψK⌋, C_next = V^c ⊎ R, |C_next| = K over " +
              std::to_string(rounds) + " rounds, " + fmt("%.2f s", secs)};
}

// ---- 4: aggregation oracle and FedAvg degeneration ----

Outcome fedavg_oracle() {
  using namespace federation;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  for (int set = 0; set < 100; ++set) {
    std::vector<ClientUpdate> updates(1 + rng() % 12);
    const std::size_t len = 1 + rng() % 64;
    for (auto& u : updates) {
      u.sample_count = 1 + rng() % 5000;
      u.params.values.resize(len);
      for (auto& v : u.params.values) v = n(rng);
    }
    const auto got = fedavg_aggregate(updates);
    for (std::size_t j = 0; j < len; ++j) {
      long double num = 0, den = 0;
      for (const auto& u : updates) {
        num += static_cast<long double>(u.sample_count) * u.params.values[j];
        den += u.sample_count;
      }
      worst = std::max(worst, std::abs(got.values[j] - static_cast<double>(num / den)));
    }
  }

  auto all = data::synth_blobs(4, 150, 5, 2.5, 40);
  std::vector<std::size_t> tr(450), te(150);
  std::iota(tr.begin(), tr.end(), std::size_t{0});
  std::iota(te.begin(), te.end(), std::size_t{450});
  const ExperimentData d{data::subset(all, tr), data::subset(all, te)};
  ExperimentConfig cfg;
  cfg.model.layer_sizes = {5, 12, 4};
  cfg.n_clients = 10;
  cfg.client_ratio = 0.3;
  cfg.rounds = 15;
  cfg.training = {2, 0.1, 8};
  cfg.psi = 0.0;
  cfg.loss = {loss::Family::kFocal, 0.0, std::vector<double>(4, 1.0)};
  std::size_t identical = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    identical += oracle::library_trajectory(cfg, d, seed) == oracle::reference_fedavg(cfg, d.train, seed);
  }
  return {worst <= 1e-15 && identical == 3,
          "aggregation max |Δ| = " + fmt("%.3g", worst) + " over 100 sets; ψ=0, γ=0 trajectory identical to reference FedAvg for " +
              std::to_string(identical) + "/3 seeds"};
}

// ---- 5-8: desk-scale MNIST ----

struct RunStats {
  std::vector<double> accuracy, minority, smoothness;
  double secs = 0.0;
};

std::map<std::string, RunStats> g_runs;

json load_doc(const std::string& name) {
  return config::read_config_json(kSource / "configs" / (name + ".json"));
}

const RunStats& desk_run(const std::string& label, const json& doc) {
  if (auto it = g_runs.find(label); it != g_runs.end()) return it->second;
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = config::parse_config(doc, kSource / "configs");
  cfg.experiment.name = label;
  const auto data = config::load_data(cfg);
  const auto result = federation::run_experiment(cfg.experiment, data);
  RunStats s;
  for (const auto& r : result.runs) {
    s.accuracy.push_back(r.final_eval.overall_accuracy);
    s.minority.push_back(r.final_eval.minority_recall);
    s.smoothness.push_back(r.smoothness);
  }
  s.secs = seconds_since(t0);

  const auto dir = out_root() / label;
  fs::create_directories(dir);
  for (const auto& r : result.runs) {
    std::ofstream(dir / ("trace_seed" + std::to_string(r.seed) + ".csv"), std::ios::binary)
        << metrics::emit_trace(r.trace);
  }
  std::ofstream(dir / "summary.json") << config::summary_json(cfg, result).dump(2) << "\n";
  std::fprintf(stderr, "  [%s] median accuracy %.4f, median minority recall %.4f, median smoothness %.4f (%.0f s)\n",
               label.c_str(), median(s.accuracy), median(s.minority), median(s.smoothness), s.secs);
  return g_runs.emplace(label, std::move(s)).first->second;
}

const RunStats& desk_config(const std::string& name) { return desk_run(name, load_doc(name)); }

Outcome unbalanced_gap() {
  const auto& ffl = desk_config("mnist_desk_unbalanced_ffl");
  const auto& ce = desk_config("mnist_desk_unbalanced_ce");
  const double gap = median(ffl.accuracy) - median(ce.accuracy);
  const double mf = median(ffl.minority), mc = median(ce.minority);
  return {gap >= 0.03 && mf > mc,
          "median accuracy FFL " + fmt("%.4f", median(ffl.accuracy)) + " vs CE " + fmt("%.4f", median(ce.accuracy)) +
              " (gap " + fmt("%+.2f", 100.0 * gap) + " pts, need ≥ +3); minority recall FFL " + fmt("%.4f", mf) +
              " vs CE " + fmt("%.4f", mc) + "; " + fmt("%.0f s", ffl.secs + ce.secs)};
}

Outcome gamma_ordering() {
  auto doc = load_doc("mnist_desk_unbalanced_ffl");
  config::apply_axis(doc, config::AblationAxis::kPsi, 0.0);
  config::apply_axis(doc, config::AblationAxis::kGamma, 2.0);
  const auto& g2 = desk_run("mnist_desk_unbalanced_gamma2_psi0", doc);
  config::apply_axis(doc, config::AblationAxis::kGamma, 5.0);
  const auto& g5 = desk_run("mnist_desk_unbalanced_gamma5_psi0", doc);
  return {median(g2.accuracy) >= median(g5.accuracy),
          "ψ=0: median accuracy γ=2 " + fmt("%.4f", median(g2.accuracy)) + " vs γ=5 " + fmt("%.4f", median(g5.accuracy))};
}

Outcome noisy_direction() {
  std::string detail;
  bool pass = true;
  for (const char* variant : {"balanced", "unbalanced"}) {
    const std::string base = std::string("mnist_desk_") + variant + "_noisy_";
    const auto& ffl = desk_config(base + "ffl");
    const auto& ce = desk_config(base + "ce");
    pass = pass && median(ffl.accuracy) >= median(ce.accuracy);
    detail += std::string(detail.empty() ? "" : "; ") + variant + " FFL " + fmt("%.4f", median(ffl.accuracy)) +
              " vs CE " + fmt("%.4f", median(ce.accuracy));
  }
  return {pass, "noise μ=10 σ=5, median accuracy " + detail};
}

Outcome smoothness() {
  const auto& ffl = desk_config("mnist_desk_balanced_ffl");
  const auto& ce = desk_config("mnist_desk_balanced_ce");
  return {median(ffl.smoothness) <= median(ce.smoothness),
          "balanced, median smoothness FFL " + fmt("%.5f", median(ffl.smoothness)) + " vs CE " +
              fmt("%.5f", median(ce.smoothness)) + " (accuracy FFL " + fmt("%.4f", median(ffl.accuracy)) + ", CE " +
              fmt("%.4f", median(ce.accuracy)) + ")"};
}

// ---- 9: IDX parser ----

Outcome parser_golden() {
  auto u32 = [](std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
  };
  std::vector<std::uint8_t> img, lab;
  u32(img, 0x803);
  u32(img, 1);
  u32(img, 2);
  u32(img, 2);
  for (std::uint8_t v : {0, 255, 7, 9}) img.push_back(v);
  u32(lab, 0x801);
  u32(lab, 3);
  for (std::uint8_t v : {3, 1, 4}) lab.push_back(v);

  std::vector<std::string> problems;
  const auto t = data::parse_idx_images(img);
  if (!(t.count == 1 && t.rows == 2 && t.cols == 2 && t.pixels == std::vector<std::uint8_t>{0, 255, 7, 9})) {
    problems.push_back("image fixture");
  }
  if (data::parse_idx_labels(lab) != std::vector<int>{3, 1, 4}) problems.push_back("label fixture");

  auto expect = [&](const std::string& what, auto&& fn, auto tag) {
    try {
      fn();
      problems.push_back(what + " accepted");
    } catch (const decltype(tag)&) {
    } catch (const std::exception& e) {
      problems.push_back(what + " raised the wrong error: " + e.what());
    }
  };
  auto bad = img;
  bad[3] = 0x01;
  expect("bad image magic", [&] { data::parse_idx_images(bad); }, FormatError(""));
  expect("empty image file", [&] { data::parse_idx_images({}); }, FormatError(""));
  auto cut = img;
  cut.pop_back();
  expect("truncated images", [&] { data::parse_idx_images(cut); }, LengthError(""));
  auto badl = lab;
  badl[2] = 0x09;
  expect("bad label magic", [&] { data::parse_idx_labels(badl); }, FormatError(""));
  auto cutl = lab;
  cutl.pop_back();
  expect("truncated labels", [&] { data::parse_idx_labels(cutl); }, LengthError(""));
  auto ten = lab;
  ten.back() = 10;
  expect("label 10", [&] { data::parse_idx_labels(ten); }, ValidationError(""));

  std::string official = "official MNIST files not present locally (set FEDFOCAL_MNIST_DIR)";
  if (const char* env = std::getenv("FEDFOCAL_MNIST_DIR")) {
    const fs::path dir = env;
    auto find = [&](const std::string& stem) { return fs::exists(dir / stem) ? dir / stem : dir / (stem + ".gz"); };
    try {
      const auto tr = data::load_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"));
      const auto te = data::load_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"));
      official = "official MNIST " + std::to_string(tr.size()) + " train / " + std::to_string(te.size()) + " test";
      if (tr.size() != 60000 || te.size() != 10000 || tr.dim() != 784) problems.push_back(official);
    } catch (const std::exception& e) {
      problems.push_back(std::string("official MNIST: ") + e.what());
    }
  }
  const fs::path desk = kSource / "data/mnist-desk";
  const auto dtr = data::load_idx(desk / "train-images-idx3-ubyte.gz", desk / "train-labels-idx1-ubyte.gz");
  const auto dte = data::load_idx(desk / "t10k-images-idx3-ubyte.gz", desk / "t10k-labels-idx1-ubyte.gz");
  if (dtr.size() != 8000 || dte.size() != 2000) problems.push_back("desk subset counts");

  std::string detail = "fixtures exact, bad magic → FormatError, truncation → LengthError, label 10 → ValidationError; " +
                       official + "; desk subset " + std::to_string(dtr.size()) + "/" + std::to_string(dte.size());
  for (const auto& p : problems) detail += "; PROBLEM: " + p;
  return {problems.empty(), detail};
}

// ---- 10: determinism across worker counts ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const std::string name = "mnist_desk_unbalanced_ffl";
  const auto cfg = kSource / "configs" / (name + ".json");
  const auto root = out_root() / "determinism";
  fs::remove_all(root);
  std::vector<std::string> traces;
  for (const char* workers : {"1", "4"}) {
    const auto out = root / ("workers" + std::string(workers));
    const std::string cmd = std::string(FEDFOCAL_CLI) + " run --config " + cfg.string() + " --out " + out.string() +
                            " --seeds 1,2 --workers " + workers + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "CLI run failed: " + cmd};
    traces.push_back(slurp(out / name / "trace_seed1.csv") + slurp(out / name / "trace_seed2.csv"));
  }
  bool same = traces[0] == traces[1] && !traces[0].empty();
  std::string detail = "two CLI runs (--workers 1 vs 4, seeds 1,2): traces " + std::string(same ? "byte-identical" : "DIFFER");
  // The in-process criterion-5 run used the same config and seeds.
  const auto earlier = out_root() / name / "trace_seed1.csv";
  if (fs::exists(earlier)) {
    const bool also = slurp(earlier) == slurp(root / "workers4" / name / "trace_seed1.csv");
    same = same && also;
    detail += std::string(", and ") + (also ? "identical" : "DIFFERENT") + " to the earlier in-process run";
  }
  return {same, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"loss equivalence", loss_equivalence},
      {"gradient correctness", gradient_correctness},
      {"sampler algebra", sampler_algebra},
      {"FedAvg oracle", fedavg_oracle},
      {"desk unbalanced MNIST, FFL vs CE", unbalanced_gap},
      {"γ ordering at ψ=0", gamma_ordering},
      {"noisy MNIST direction", noisy_direction},
      {"smoothness", smoothness},
      {"IDX parser golden files", parser_golden},
      {"determinism across --workers", determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!wanted.empty() && !wanted.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
