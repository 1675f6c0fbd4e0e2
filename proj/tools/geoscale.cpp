// geoscale command line: validate, run, fit, synth, report.
//
// Exit codes: 0 success, 1 configuration or validation failure, 2 stage failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "geoscale/pipeline.hpp"
#include "geoscale/synth/generator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags that mirror PipelineConfig fields. Anything set here wins over the file.
struct Overrides {
  std::string config;
  std::optional<std::string> metadata, boundaries, population, area, covariates, regions, aliases;
  std::optional<std::string> output_dir, denominator;
  std::optional<unsigned> workers;
  std::optional<double> epsilon, classify_tolerance;
  std::optional<int> year_from, year_to;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON config file");
    app->add_option("--metadata", metadata, "metadata dump");
    app->add_option("--boundaries", boundaries, "GeoJSON boundary file");
    app->add_option("--population", population, "yearly population table");
    app->add_option("--area", area, "yearly area table");
    app->add_option("--covariates", covariates, "static covariate table");
    app->add_option("--regions", regions, "region membership table");
    app->add_option("--aliases", aliases, "name-to-code alias table");
    app->add_option("-o,--output-dir", output_dir, "output directory");
    app->add_option("-j,--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    app->add_option("--epsilon", epsilon, "boundary rescue distance in degrees");
    app->add_option("--denominator", denominator, "fraction denominator")
        ->check(CLI::IsMember({"foreign_objects", "all_objects"}));
    app->add_option("--classify-tolerance", classify_tolerance, "half-width of the linear band around beta = 1");
    app->add_option("--year-from", year_from, "first covariate year");
    app->add_option("--year-to", year_to, "last covariate year");
  }

  geoscale::PipelineConfig resolve() const {
    json j = json::object();
    fs::path base = fs::current_path();
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) throw geoscale::ConfigError("cannot open config " + config);
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw geoscale::ConfigError("config " + config + " is not valid JSON: " + e.what());
      }
      base = fs::path(config).has_parent_path() ? fs::path(config).parent_path() : fs::path(".");
    }
    // Paths given on the command line are relative to the working directory.
    auto path_flag = [&](const std::optional<std::string>& v, const char* key) {
      if (v) j["inputs"][key] = fs::absolute(*v).string();
    };
    path_flag(metadata, "metadata");
    path_flag(boundaries, "boundaries");
    path_flag(population, "population");
    path_flag(area, "area");
    path_flag(covariates, "covariates");
    path_flag(regions, "regions");
    path_flag(aliases, "aliases");
    if (output_dir) j["output_dir"] = fs::absolute(*output_dir).string();
    if (workers) j["workers"] = *workers;
    if (epsilon) j["epsilon"] = *epsilon;
    if (denominator) j["fraction_denominator"] = *denominator;
    if (classify_tolerance) j["classify_tolerance"] = *classify_tolerance;
    if (year_from) j["years"]["from"] = *year_from;
    if (year_to) j["years"]["to"] = *year_to;
    return geoscale::PipelineConfig::from_json(j, base);
  }
};

int report_problems(const std::vector<geoscale::Problem>& problems) {
  for (const auto& p : problems) std::cerr << p.kind << "(" << p.subject << "): " << p.detail << "\n";
  return problems.empty() ? 0 : 1;
}

void print_summary(const json& report) {
  const auto& ing = report["ingest"];
  const auto& geo = report["geocode"];
  const auto& homes = report["homes"];
  std::cout << "kept " << ing["kept"] << " of " << ing["total_lines"] << " lines; geocoded " << geo["assigned"]
            << " (" << geo["epsilon_rescued"] << " rescued), unassigned " << geo["unassigned"] << "\n";
  std::cout << "homes " << homes["homes_found"] << " of " << homes["users"] << " users\n";
  const auto& fits = report["fits"];
  for (const std::string axis : {"population", "area"}) {
    const auto& w = fits["world"][axis]["fit"];
    if (w.is_null()) {
      std::cout << "world/" << axis << ": unfittable\n";
      continue;
    }
    std::printf("world/%s: beta %.4f  R2 %.1f%%  %s\n", axis.c_str(), w["beta"].get<double>(),
                100 * w["r_squared"].get<double>(), w["regime"].get<std::string>().c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geoscale: attractiveness of countries from geotagged media"};
  app.require_subcommand(1);

  Overrides validate_opts, run_opts, fit_opts;
  auto* validate_cmd = app.add_subcommand("validate", "check a config without running anything");
  validate_opts.attach(validate_cmd);

  auto* run_cmd = app.add_subcommand("run", "run every stage and write report.json plus plot data");
  run_opts.attach(run_cmd);
  bool skip_plots = false;
  run_cmd->add_flag("--no-plots", skip_plots, "do not write plot-data files");

  auto* fit_cmd = app.add_subcommand("fit", "redo the covariate join and fits from persisted counts");
  fit_opts.attach(fit_cmd);

  geoscale::synth::SynthConfig synth_cfg;
  std::string synth_out;
  std::vector<double> betas;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic world and its config.json");
  synth_cmd->add_option("-o,--output-dir", synth_out, "directory for the generated files")->required();
  synth_cmd->add_option("--seed", synth_cfg.seed, "generator seed");
  synth_cmd->add_option("--countries", synth_cfg.n_countries, "number of countries");
  synth_cmd->add_option("--users", synth_cfg.n_users, "number of users");
  synth_cmd->add_option("--beta", betas, "planted exponent per region (repeat for more regions)");
  synth_cmd->add_option("--population-min", synth_cfg.population_min, "smallest population");
  synth_cmd->add_option("--population-max", synth_cfg.population_max, "largest population");
  synth_cmd->add_option("--scale", synth_cfg.objects_at_min_population, "foreign objects at the smallest population");
  synth_cmd->add_option("--noise", synth_cfg.noise_sigma, "sigma of log-normal noise");
  synth_cmd->add_option("--trip-probability", synth_cfg.foreign_trip_probability, "share of users who travel");
  synth_cmd->add_option("--non-geotag-rate", synth_cfg.non_geotag_rate, "share of lines without coordinates");
  synth_cmd->add_option("--bad-date-rate", synth_cfg.bad_date_rate, "share of lines with a broken date");

  std::string report_path, plot_dir;
  auto* report_cmd = app.add_subcommand("report", "re-emit plot-data files from a report.json");
  report_cmd->add_option("report", report_path, "report.json")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("-o,--output-dir", plot_dir, "where to write the files (default: <report dir>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*validate_cmd) {
      const auto cfg = validate_opts.resolve();
      const int rc = report_problems(geoscale::validate(cfg));
      if (rc == 0) std::cout << "ok\n";
      return rc;
    }
    if (*run_cmd || *fit_cmd) {
      const auto cfg = (*run_cmd ? run_opts : fit_opts).resolve();
      if (report_problems(geoscale::validate(cfg)) != 0) return 1;
      geoscale::RunOptions options;
      options.fits_only = static_cast<bool>(*fit_cmd);
      const auto report = geoscale::run(cfg, options);
      if (!skip_plots) geoscale::emit_plot_data(report, cfg.out() / "plots");
      print_summary(report);
      std::cout << "report: " << (cfg.out() / geoscale::files::report).string() << "\n";
      return 0;
    }
    if (*synth_cmd) {
      if (!betas.empty()) synth_cfg.region_betas = betas;
      const auto world = geoscale::synth::generate_world(synth_cfg);
      geoscale::synth::write_world(world, synth_out);
      std::cout << "wrote " << world.metadata_lines.size() << " lines for " << synth_cfg.n_countries
                << " countries to " << synth_out << "\n";
      return 0;
    }
    if (*report_cmd) {
      std::ifstream in(report_path);
      const auto report = json::parse(in);
      const fs::path dir = plot_dir.empty() ? fs::path(report_path).parent_path() / "plots" : fs::path(plot_dir);
      for (const auto& f : geoscale::emit_plot_data(report, dir)) std::cout << (dir / f).string() << "\n";
      return 0;
    }
  } catch (const geoscale::StageError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const geoscale::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
