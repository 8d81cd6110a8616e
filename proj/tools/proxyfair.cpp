// proxyfair: stage-by-stage command-line driver.

#include "proxyfair/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>

using namespace proxyfair;

namespace {

const std::vector<std::string> kStages = {"ingest", "embed", "cluster", "mitigate", "evaluate", "probe", "reproduce"};

Json run_stage(const std::string& stage, const RunConfig& c) {
  if (stage == "ingest") return cmd_ingest(c);
  if (stage == "embed") return cmd_embed(c);
  if (stage == "cluster") return cmd_cluster(c);
  if (stage == "mitigate") return cmd_mitigate(c);
  if (stage == "evaluate") return cmd_evaluate(c);
  if (stage == "probe") return cmd_probe(c);
  return cmd_reproduce(c);
}

std::string summary(const std::string& stage, const Json& out) {
  if (stage == "evaluate") return out.dump(2);
  if (stage == "probe") return out.at("similarity").dump(2);
  if (stage == "reproduce") return "wrote " + out.at("table").get<std::string>() + ".md and .json";
  return stage + " ok, config_hash " + out.value("config_hash", std::string("?"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Proxy sensitive labels and bias mitigation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON file of RunConfig keys")->check(CLI::ExistingFile);
  std::map<std::string, std::string> flags;
  for (const auto& f : config_fields()) app.add_option("--" + f.key, flags[f.key], f.help);

  std::map<std::string, CLI::App*> subs;
  for (const auto& stage : kStages) {
    subs[stage] = app.add_subcommand(stage, "run the " + stage + " stage");
    subs[stage]->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  std::string stage;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) stage = name;

  try {
    RunConfig config;
    if (!config_path.empty()) config.merge_json(read_json(config_path));
    if (const char* env = std::getenv("PROXYFAIR_SEED"))
      for (const auto& f : config_fields())
        if (f.key == "seed") f.parse(config, env);
    for (const auto& f : config_fields())
      if (app.count("--" + f.key) > 0) f.parse(config, flags[f.key]);
    config.validate();
    std::cout << summary(stage, run_stage(stage, config)) << "\n";
  } catch (const ArtifactError& e) {
    std::cerr << "proxyfair " << stage << ": " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "proxyfair " << stage << ": " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "proxyfair " << stage << ": " << e.what() << "\n";
    return 2;
  }
  return 0;
}
