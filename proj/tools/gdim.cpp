#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "gdim/experiment.hpp"

using namespace gdim;

namespace {

int run_command(const std::string& experiment, const std::string& config_path,
                const std::map<std::string, std::string>& flags) {
  RunConfig config;
  if (!config_path.empty()) config = load_config(config_path);
  if (!experiment.empty()) config.set("experiment", experiment);
  for (const auto& [k, v] : flags) config.set(k, v);
  if (config.get("experiment").empty()) throw ValidationError("experiment: none given (positional or in --config)");

  const Settings s = resolve(config);
  set_default_threads(s.threads ? s.threads : std::max(1u, std::thread::hardware_concurrency()));

  const auto t0 = std::chrono::steady_clock::now();
  RunResult res = run_experiment(config);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.files.push_back({"manifest.txt", manifest_text(config, res, wall)});
  commit_files(s.out, res.files);
  for (const auto& n : res.notes) std::cerr << "note: " << n << '\n';
  std::cout << to_string(s.experiment) << ": wrote " << res.files.size() << " files to " << s.out << " (config "
            << config.hash() << ", " << wall << " s)\n";
  return 0;
}

DimensionSpectrum read_spectrum_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("compare: cannot open '" + path + "'");
  return read_spectrum_csv(in);
}

std::string hash_of_file(const std::string& path) {
  std::ifstream in(path);
  return config_hash_of(in).value_or("none");
}

int compare_command(const std::string& a, const std::string& b, bool hyperbola, const std::string& out_path) {
  DimensionSpectrum sa = read_spectrum_file(a), sb;
  if (hyperbola) {
    if (!b.empty()) throw ValidationError("compare: --hyperbola takes a single spectrum");
    sb = hyperbola_reference(sa);
    sa = above_two(sa);
  } else {
    if (b.empty()) throw ValidationError("compare: needs two spectrum files (or --hyperbola)");
    sb = read_spectrum_file(b);
  }
  const auto rows = compare(sa, sb);
  std::ostringstream text;
  text << "# a=" << a << ",config_hash_a=" << hash_of_file(a) << '\n';
  text << "# b=" << (hyperbola ? "D2/(q-1) from a" : b) << ",config_hash_b=" << (hyperbola ? hash_of_file(a) : hash_of_file(b))
       << '\n';
  write_compare_csv(text, rows);
  if (out_path.empty()) {
    std::cout << text.str();
  } else {
    const std::filesystem::path p(out_path);
    commit_files(p.has_parent_path() ? p.parent_path() : std::filesystem::path("."),
                 {{p.filename().string(), text.str()}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalized dimensions, extreme values and large deviations of dynamical systems"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  auto* run = app.add_subcommand("run", "Run one experiment and write its CSVs and manifest");
  std::string experiment, config_path;
  std::string names;
  for (auto e : kExperiments) names += (names.empty() ? "" : ", ") + std::string(to_string(e));
  run->add_option("experiment", experiment, "One of: " + names);
  run->add_option("--config", config_path, "key=value config file (flags override it)");
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_opts;
  for (const auto& k : kConfigKeys) {
    if (k.name == "experiment") continue;
    const std::string name(k.name);
    std::string help(k.help);
    if (!k.fallback.empty()) help += " [" + std::string(k.fallback) + "]";
    flag_opts[name] = run->add_option("--" + name, flag_values[name], help);
  }

  auto* cmp = app.add_subcommand("compare", "Per-q differences of two spectrum CSVs");
  std::string a, b, cmp_out;
  bool hyperbola = false;
  cmp->add_option("a", a, "spectrum CSV")->required();
  cmp->add_option("b", b, "spectrum CSV");
  cmp->add_flag("--hyperbola", hyperbola, "compare a (q > 2) with D2/(q-1) from its own q = 2 entry");
  cmp->add_option("--out", cmp_out, "write the comparison CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      std::map<std::string, std::string> given;
      for (const auto& [name, opt] : flag_opts)
        if (opt->count() > 0) given[name] = flag_values[name];
      return run_command(experiment, config_path, given);
    }
    return compare_command(a, b, hyperbola, cmp_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_status(e);
  }
}
