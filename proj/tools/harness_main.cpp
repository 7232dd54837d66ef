#include <iostream>

#include <CLI11.hpp>

#include "mqttst/harness/runner.hpp"
#include "mqttst/net/socket.hpp"

namespace harness = mqttst::harness;

int main(int argc, char** argv) {
  CLI::App app{"Runs broker meshes from a topology file and checks the resulting tree"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, broker_bin, log_level = "warn";
  harness::RunOptions opt;
  std::optional<double> duration;
  long converge_timeout = 120;
  auto* run = app.add_subcommand("run", "Deploy a topology, perform its steps, write a report");
  run->add_option("spec", spec_path, "Topology file")->required();
  run->add_option("--out", out_dir, "Report directory (default runs/<name>)");
  run->add_option("--seed", opt.seed, "Workload seed");
  run->add_option("--duration", duration, "Override the workload duration in seconds");
  run->add_option("--broker-bin", broker_bin, "Broker executable");
  run->add_option("--log-level", log_level, "Broker log level");
  run->add_option("--converge-timeout", converge_timeout, "Seconds to wait for quiescence");

  std::string report_dir;
  auto* verify = app.add_subcommand("verify", "Re-check the final tree in a report directory");
  verify->add_option("dir", report_dir, "Report directory")->required();
  CLI11_PARSE(app, argc, argv);

  if (*verify) {
    auto v = harness::verify_report(report_dir);
    if (!v) {
      std::cerr << v.error() << '\n';
      return 2;
    }
    std::cout << v->text;
    return v->pass() ? 0 : 1;
  }

  auto spec = harness::load_topology(spec_path);
  if (!spec) {
    std::cerr << spec.error() << '\n';
    return 2;
  }
  opt.out_dir = out_dir.empty() ? std::filesystem::path("runs") / spec->name : std::filesystem::path(out_dir);
  opt.broker_bin = broker_bin.empty() ? harness::default_broker_bin() : broker_bin;
  opt.duration_s = duration;
  opt.log_level = log_level;
  opt.converge_timeout = std::chrono::seconds(converge_timeout);
  mqttst::net::raise_fd_limit();

  auto report = harness::run_scenario(*spec, opt);
  if (!report) {
    std::cerr << "run failed: " << report.error() << '\n';
    return 2;
  }
  std::cout << (report->pass ? "PASS " : "FAIL ") << spec->name << '\n';
  for (const auto& s : report->steps) {
    std::cout << (s.pass ? "  ok   " : "  FAIL ") << s.label;
    if (!s.detail.empty()) std::cout << ": " << s.detail;
    std::cout << '\n';
  }
  std::cout << "report: " << opt.out_dir.string() << '\n';
  return report->pass ? 0 : 1;
}
