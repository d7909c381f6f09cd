// dtwin: generate cohorts, train and evaluate twin bundles, serve the API,
// run one simulation from the command line.
//
// Log level from DTWIN_LOG_LEVEL (trace, debug, info, warn, error, off).

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dtwin/api.hpp"
#include "dtwin/engine.hpp"
#include "dtwin/server.hpp"
#include "dtwin/symptoms.hpp"
#include "dtwin/synthetic.hpp"

using namespace dtwin;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

// Inline JSON if it starts with '{', otherwise a file path.
json json_argument(const std::string& arg) {
  const std::string text = !arg.empty() && arg.front() == '{' ? arg : read_file(arg);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void print_diagnostics(const ValidationError& e) {
  for (const auto& d : e.diagnostics()) {
    std::cerr << "  " << (d.row ? "row " + std::to_string(d.row) + ", " : "") << d.field << ": " << d.message << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* level = std::getenv("DTWIN_LOG_LEVEL")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }

  CLI::App app{"Sequential-treatment digital twin for head and neck cancer"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-cohort", "Write a synthetic cohort CSV");
  std::uint64_t gen_seed = 1;
  std::size_t gen_n = kDefaultCohortSize;
  std::string gen_out, gen_symptoms;
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--n", gen_n, "Number of patients")->check(CLI::Range(kMinSyntheticCohortSize, std::size_t{1000000}));
  gen->add_option("--out", gen_out, "Output CSV")->required();
  gen->add_option("--symptoms-out", gen_symptoms, "Also write a symptom cohort CSV");

  auto* train = app.add_subcommand("train", "Train all twin models and write a bundle");
  std::string train_cohort, train_out, train_config;
  std::uint64_t train_seed = 7;
  bool train_small = false;
  train->add_option("--cohort", train_cohort, "Cohort CSV (default: generate a synthetic cohort)");
  train->add_option("--out-bundle", train_out, "Bundle path")->required();
  train->add_option("--seed", train_seed, "Pipeline seed");
  train->add_option("--config", train_config, "Pipeline config JSON (file or inline)");
  train->add_flag("--small", train_small, "Narrow networks and short schedules");

  auto* eval = app.add_subcommand("eval", "Evaluate a bundle on a cohort");
  std::string eval_bundle, eval_cohort, eval_report;
  eval->add_option("--bundle", eval_bundle, "Bundle path")->required();
  eval->add_option("--cohort", eval_cohort, "Cohort CSV (default: the bundle's evaluation split)");
  eval->add_option("--report", eval_report, "Write the report here (.json for JSON, otherwise text)");

  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  std::string serve_bundle, serve_host = "127.0.0.1";
  int serve_port = 8080;
  serve->add_option("--bundle", serve_bundle, "Bundle path (without one, /api/simulate answers 503)");
  serve->add_option("--port", serve_port, "Port")->check(CLI::Range(0, 65535));
  serve->add_option("--host", serve_host, "Listen address");

  auto* simulate = app.add_subcommand("simulate", "Run one simulation and print the response JSON");
  std::string sim_bundle, sim_patient, sim_decision = "CC", sim_strategy = "imitation", sim_out;
  std::vector<std::string> sim_fixed;
  std::uint64_t sim_seed = 0;
  simulate->add_option("--bundle", sim_bundle, "Bundle path")->required();
  simulate->add_option("--patient", sim_patient, "Patient JSON (file or inline); absent fields take defaults")
      ->required();
  simulate->add_option("--decision", sim_decision, "Decision under study: IC, CC or ND");
  simulate->add_option("--strategy", sim_strategy, "imitation or optimal");
  simulate->add_option("--fix", sim_fixed, "Fix a decision, e.g. --fix IC=no --fix ND=yes");
  auto* seed_opt = simulate->add_option("--seed", sim_seed, "Request seed for the MC-dropout intervals");
  simulate->add_option("--out", sim_out, "Write the response here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const Cohort c = generate_synthetic_cohort(gen_seed, gen_n);
      write_cohort_csv(c, gen_out);
      spdlog::info("wrote {} patients to {}", c.size(), gen_out);
      if (!gen_symptoms.empty()) {
        const SymptomCohort s = generate_symptom_cohort(gen_seed);
        write_symptom_csv(s, gen_symptoms);
        spdlog::info("wrote {} symptom records to {}", s.size(), gen_symptoms);
      }
    } else if (*train) {
      PipelineConfig cfg = train_small ? PipelineConfig::small() : PipelineConfig{};
      if (!train_config.empty()) {
        json j = cfg.to_json();
        j.merge_patch(json_argument(train_config));
        cfg = PipelineConfig::from_json(j);
      }
      if (train->count("--seed")) cfg.seed = train_seed;
      Cohort cohort;
      if (!train_cohort.empty()) cohort = load_cohort_csv(train_cohort);
      const auto engine = TwinEngine::train(cfg, std::move(cohort));
      ModelBundle b = engine->to_bundle();
      save_bundle(b, train_out);
      std::cout << "bundle " << train_out << " digest " << b.digest << '\n';
    } else if (*eval) {
      const auto engine = TwinEngine::load(eval_bundle);
      const Cohort cohort = eval_cohort.empty() ? engine->eval_cohort() : load_cohort_csv(eval_cohort);
      const MetricReport report = evaluate_engine(*engine, cohort);
      const bool as_json = eval_report.size() > 5 && eval_report.ends_with(".json");
      const std::string text = as_json ? report.to_json().dump(2) + "\n" : report.to_text();
      if (eval_report.empty()) {
        std::cout << text;
      } else {
        write_file(eval_report, text);
        spdlog::info("report written to {}", eval_report);
      }
    } else if (*serve) {
      std::shared_ptr<const TwinEngine> engine;
      if (!serve_bundle.empty()) engine = TwinEngine::load(serve_bundle);
      ApiService service(engine);
      HttpServer server(service);
      const int port = server.bind(serve_host, serve_port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      spdlog::info("listening on http://{}:{}", serve_host, port);
      server.listen();
      g_server = nullptr;
    } else if (*simulate) {
      const auto engine = TwinEngine::load(sim_bundle);
      json req{{"patient", json_argument(sim_patient)}, {"decision", sim_decision}, {"strategy", sim_strategy}};
      req["fixed"] = json::object();
      for (const auto& f : sim_fixed) {
        const auto eq = f.find('=');
        if (eq == std::string::npos) throw ConfigError("--fix expects STAGE=yes|no, got '" + f + "'");
        const std::string v = f.substr(eq + 1);
        if (v != "yes" && v != "no") throw ConfigError("--fix value must be yes or no, got '" + v + "'");
        req["fixed"][f.substr(0, eq)] = v == "yes";
      }
      if (*seed_opt) req["seed"] = sim_seed;
      const SimulationResponse res = handle_simulate(*engine, request_from_json(req));
      const std::string text = res.to_json().dump(2) + "\n";
      if (sim_out.empty()) {
        std::cout << text;
      } else {
        write_file(sim_out, text);
      }
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    print_diagnostics(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
