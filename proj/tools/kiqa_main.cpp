// Command-line front end: `kiqa <command> --config FILE [key=value ...]`.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kiqa/errors.hpp"
#include "kiqa/pipeline.hpp"

namespace {

int fail(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-injected cross-lingual extractive QA"};
  app.require_subcommand(1);

  std::string config_path;
  std::string run_dir;
  std::vector<std::string> variants;
  std::vector<std::string> overrides;

  app.add_subcommand("print-config", "Print the built-in default configuration");
  for (const std::string& name : kiqa::pipeline_commands()) {
    CLI::App* sub = app.add_subcommand(name, "Run the " + name + " stage");
    sub->add_option("--config", config_path, "Configuration file")->required();
    sub->add_option("--run-dir", run_dir, "Artifact directory (default runs/<time>-<hash>)");
    if (name == "inject" || name == "finetune" || name == "evaluate" || name == "pipeline") {
      sub->add_option("--variant", variants, "injected or baseline (repeatable)")
          ->allow_extra_args(false)
          ->check(CLI::IsMember({"injected", "baseline"}));
    }
    sub->add_option("overrides", overrides, "key=value overrides");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("Usage", e.what());
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->get_name() == "print-config") {
    std::cout << kiqa::default_config_text();
    return 0;
  }

  try {
    const kiqa::PipelineConfig config = kiqa::load_config(config_path, overrides);
    const std::filesystem::path dir =
        run_dir.empty() ? kiqa::default_run_dir(config) : std::filesystem::path(run_dir);
    if (variants.empty()) variants = {"injected", "baseline"};
    std::cout << "run " << dir.string() << " config_hash=" << config.hash() << '\n';
    kiqa::run_command(sub->get_name(), config, dir, std::cout, variants);
    std::cout.flush();
  } catch (const kiqa::Error& e) {
    return fail(std::string(kiqa::to_string(e.kind())), e.what());
  } catch (const std::exception& e) {
    return fail("Internal", e.what());
  }
  return 0;
}
