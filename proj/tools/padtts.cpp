// padtts command line: gen-data, train, synth, eval, export-pad, serve.
// Exit codes: 0 ok, 1 usage, 2 configuration, 3 runtime.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "padtts/data.hpp"
#include "padtts/errors.hpp"
#include "padtts/eval.hpp"
#include "padtts/model.hpp"
#include "padtts/service.hpp"
#include "padtts/train.hpp"

namespace fs = std::filesystem;
using namespace padtts;

namespace {

struct Common {
  std::string out = "out";
  std::uint64_t seed = 42;
  std::string config;
};

// --config, else $PADTTS_CONFIG, else empty. Sections: "model", "train", "serve".
nlohmann::json load_config(const std::string& flag) {
  std::string path = flag;
  if (path.empty()) {
    if (const char* env = std::getenv("PADTTS_CONFIG")) path = env;
  }
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    auto j = nlohmann::json::parse(in);
    if (!j.is_object()) throw ConfigError("config " + path + " must be a JSON object");
    j["__path"] = path;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

style::PadVector parse_pad(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValueError("--pad: '" + item + "' is not a number");
    }
  }
  if (v.size() != 3) throw ValueError("--pad expects three comma-separated values p,a,d");
  style::PadVector p{v[0], v[1], v[2]};
  p.validate();
  return p;
}

std::vector<data::Example> examples_for(const fs::path& manifest, const data::Vocab& vocab,
                                        const data::FeatureConfig& fc) {
  const auto utts = data::load_manifest(manifest);
  if (utts.empty()) throw ConfigError("manifest " + manifest.string() + " is empty");
  return data::load_examples(utts, vocab, data::FeatureExtractor(fc));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

int cmd_gen_data(const Common& c, const std::string& pad_table, std::size_t n, std::size_t n_test) {
  const auto pads = style::load_pad_table(pad_table);
  const auto train = data::generate_synthetic_corpus(c.seed, n, pads, fs::path(c.out) / "train");
  std::cout << "wrote " << train.utterances.size() << " utterances to " << train.manifest.string()
            << "\n";
  if (n_test) {
    const auto test =
        data::generate_synthetic_corpus(mix64(c.seed), n_test, pads, fs::path(c.out) / "test");
    std::cout << "wrote " << test.utterances.size() << " utterances to "
              << test.manifest.string() << "\n";
  }
  return 0;
}

struct TrainArgs {
  std::string stage;
  std::string manifest;
  std::string checkpoint;
  std::string preset = "CAT-4";
  std::string pad_table;
  long steps = -1;
  std::size_t batch_size = 0;
  double lr = 0.0;
  std::size_t checkpoint_every = 0;
};

int cmd_train(const Common& c, const TrainArgs& a) {
  const Stage stage = stage_from(a.stage);
  if (stage == Stage::init) throw ConfigError("--stage must be base, tune-w2 or adjust-pad");
  const auto cfg_json = load_config(c.config);

  auto tc = train::TrainConfig::from_json(cfg_json.value("train", nlohmann::json::object()));
  tc.seed = c.seed;
  tc.out_dir = c.out;
  const auto i = static_cast<std::size_t>(stage);
  if (a.steps >= 0) tc.steps[i] = static_cast<std::size_t>(a.steps);
  if (a.batch_size) tc.batch_size = a.batch_size;
  if (a.lr > 0.0) tc.learning_rate[i] = a.lr;
  if (a.checkpoint_every) tc.checkpoint_every = a.checkpoint_every;
  tc.validate();

  std::unique_ptr<Model> model;
  if (stage == Stage::base) {
    if (a.pad_table.empty()) throw ConfigError("train --stage base needs --pad-table");
    auto synth_cfg = cfg_json.contains("model") ? synth::SynthConfig::from_json(cfg_json["model"])
                                                : synth::SynthConfig::from_preset(a.preset);
    const auto utts = data::load_manifest(a.manifest);
    if (utts.empty()) throw ConfigError("manifest " + a.manifest + " is empty");
    model = std::make_unique<Model>(synth_cfg, data::FeatureConfig{}, data::Vocab::build(utts),
                                    style::load_pad_table(a.pad_table), c.seed);
  } else {
    if (a.checkpoint.empty())
      throw StageError("stage " + to_string(stage) + " requires a " +
                       to_string(train::required_predecessor(stage)) +
                       " checkpoint (--checkpoint)");
    model = std::make_unique<Model>(Model::load(a.checkpoint));
  }
  const auto examples = examples_for(a.manifest, model->vocab(), model->features());
  const auto n_steps = tc.steps_for(stage);
  auto result = train::run_stage(stage, *model, examples, tc, [&](std::size_t step, double loss) {
    if (step % 100 == 0 || step + 1 == n_steps)
      std::cerr << to_string(stage) << " step " << step << " loss " << loss << "\n";
  });
  std::cout << "wrote " << (fs::path(c.out) / (to_string(stage) + ".ckpt")).string() << "\n";
  return 0;
}

struct SynthArgs {
  std::string checkpoint, text, pad, emotion;
  bool no_style = false;
  std::size_t gl_iters = 32;
};

int cmd_synth(const Common& c, const SynthArgs& a) {
  const int chosen = !a.pad.empty() + !a.emotion.empty() + a.no_style;
  if (chosen != 1) throw ConfigError("choose exactly one of --pad, --emotion, --no-style");
  StyleSpec spec = StyleSpec::disabled();
  if (!a.pad.empty()) spec = StyleSpec::of(parse_pad(a.pad));
  if (!a.emotion.empty()) spec = StyleSpec::of(style::emotion_from_label(a.emotion));
  if (a.gl_iters == 0) throw ConfigError("--gl-iters must be >= 1");
  const auto model = Model::load(a.checkpoint);
  const auto syn = model.synthesize(a.text, spec);
  const auto wav = data::FeatureExtractor(model.features()).invert(syn.linear, a.gl_iters);
  const fs::path out(c.out);
  fs::create_directories(out);
  dsp::write_wav(out / "synth.wav", wav);
  dsp::save_spectrogram(out / "synth_mel.spec", syn.mel);
  std::cout << "wrote " << (out / "synth.wav").string() << " (" << wav.duration_s() << " s, "
            << syn.output.steps << " steps" << (syn.output.truncated ? ", truncated" : "")
            << ")\n";
  return 0;
}

int cmd_eval(const Common& c, const std::vector<std::string>& models_arg,
             const std::string& manifest, const std::vector<std::string>& modes_arg) {
  if (models_arg.empty()) throw ConfigError("--model NAME=CHECKPOINT is required");
  std::vector<eval::Mode> modes;
  for (const auto& m : modes_arg) modes.push_back(eval::mode_from(m));
  if (modes.empty()) modes = {eval::Mode::teacher_forced, eval::Mode::free_running};

  const auto utts = data::load_manifest(manifest);
  if (utts.empty()) throw ConfigError("manifest " + manifest + " is empty");

  std::vector<std::unique_ptr<Model>> owned;
  std::vector<eval::NamedModel> named;
  for (const auto& spec : models_arg) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--model expects NAME=CHECKPOINT, got '" + spec + "'");
    owned.push_back(std::make_unique<Model>(Model::load(spec.substr(eq + 1))));
    named.push_back({spec.substr(0, eq), owned.back().get()});
  }
  // Every model must share the front end and vocabulary of the first.
  const auto& first = *owned.front();
  for (const auto& m : owned)
    if (m->features().to_json() != first.features().to_json() ||
        m->vocab().to_json() != first.vocab().to_json())
      throw ConfigError("models disagree on features or vocabulary");
  const auto examples =
      data::load_examples(utts, first.vocab(), data::FeatureExtractor(first.features()));

  const auto report = eval::evaluate_models(named, examples, modes);
  const fs::path out(c.out);
  write_text(out / "report.json", report.to_json().dump(2) + "\n");
  write_text(out / "report.txt", report.text());
  std::cout << report.text();
  if (report.failures()) {
    std::cerr << report.failures() << " utterance(s) failed\n";
    return 3;
  }
  return 0;
}

int cmd_export_pad(const Common& c, const std::string& checkpoint) {
  const auto model = Model::load(checkpoint);
  const auto adjusted = train::export_adjusted_pad(model);
  const fs::path out(c.out);
  fs::create_directories(out);
  adjusted.table.save(out / "adjusted_pad.json");
  write_text(out / "sign_report.json", adjusted.report.to_json().dump(2) + "\n");
  std::cout << "wrote " << (out / "adjusted_pad.json").string() << "; sign compatibility "
            << adjusted.report.fraction * 100.0 << "% (" << adjusted.report.matching << "/"
            << adjusted.report.compared << ")\n";
  return 0;
}

int cmd_serve(const Common& c, const std::string& checkpoint, const std::string& host, int port) {
  const auto cfg_json = load_config(c.config);
  service::ServiceConfig sc;
  if (cfg_json.contains("serve")) {
    sc = service::ServiceConfig::from_json(cfg_json["serve"]);
    if (!sc.checkpoint.empty() && sc.checkpoint.is_relative())
      sc.checkpoint = fs::path(cfg_json["__path"].get<std::string>()).parent_path() / sc.checkpoint;
  }
  if (!checkpoint.empty()) sc.checkpoint = checkpoint;
  if (!host.empty()) sc.host = host;
  if (port > 0) sc.port = port;
  sc.validate();
  if (sc.model_id.empty()) sc.model_id = sc.checkpoint.stem().string();
  auto model = std::make_shared<const Model>(Model::load(sc.checkpoint));
  const service::Service svc(model, sc.model_id, sc.griffin_lim_iterations);
  service::serve(svc, sc.host, sc.port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"padtts: continuous-emotion speech synthesis lab"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", common.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", common.seed, "Random seed")->capture_default_str();
    sub->add_option("--config", common.config, "JSON config (default: $PADTTS_CONFIG)");
  };

  std::string pad_table;
  std::size_t n_per_emotion = 50, n_test = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic emotional-tone corpus");
  add_common(gen);
  gen->add_option("--pad-table", pad_table, "PAD table JSON")->required();
  gen->add_option("--n-per-emotion", n_per_emotion, "Training utterances per emotion")
      ->capture_default_str();
  gen->add_option("--test-per-emotion", n_test, "Held-out utterances per emotion")
      ->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Run one stage of the training schedule");
  add_common(tr);
  tr->add_option("--stage", ta.stage, "base | tune-w2 | adjust-pad")->required();
  tr->add_option("--data", ta.manifest, "Training manifest (JSON lines)")->required();
  tr->add_option("--checkpoint", ta.checkpoint, "Checkpoint from the previous stage");
  tr->add_option("--preset", ta.preset, "Injection preset for a new model")->capture_default_str();
  tr->add_option("--pad-table", ta.pad_table, "PAD table used to initialise W1 (base stage)");
  tr->add_option("--steps", ta.steps, "Steps for this stage");
  tr->add_option("--batch-size", ta.batch_size, "Utterances per step");
  tr->add_option("--lr", ta.lr, "Learning rate for this stage");
  tr->add_option("--checkpoint-every", ta.checkpoint_every, "Intermediate checkpoint cadence");

  SynthArgs sa;
  auto* sy = app.add_subcommand("synth", "Synthesize one utterance");
  add_common(sy);
  sy->add_option("--checkpoint", sa.checkpoint, "Model checkpoint")->required();
  sy->add_option("--text", sa.text, "Input text")->required();
  sy->add_option("--pad", sa.pad, "Continuous style p,a,d in [-1, 1]");
  sy->add_option("--emotion", sa.emotion, "Emotion label");
  sy->add_flag("--no-style", sa.no_style, "Disable style injection");
  sy->add_option("--gl-iters", sa.gl_iters, "Griffin-Lim iterations")->capture_default_str();

  std::vector<std::string> eval_models, eval_modes;
  std::string eval_manifest;
  auto* ev = app.add_subcommand("eval", "Objective evaluation report");
  add_common(ev);
  ev->add_option("--model", eval_models, "NAME=CHECKPOINT (repeatable)");
  ev->add_option("--data", eval_manifest, "Test manifest")->required();
  ev->add_option("--mode", eval_modes, "teacher_forced | free_running (repeatable)");

  std::string export_ckpt;
  auto* ex = app.add_subcommand("export-pad", "Export the adjusted PAD table");
  add_common(ex);
  ex->add_option("--checkpoint", export_ckpt, "adjust_pad checkpoint")->required();

  std::string serve_ckpt, serve_host;
  int serve_port = 0;
  auto* sv = app.add_subcommand("serve", "HTTP service");
  add_common(sv);
  sv->add_option("--checkpoint", serve_ckpt, "Model checkpoint");
  sv->add_option("--host", serve_host, "Bind address");
  sv->add_option("--port", serve_port, "Port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) return cmd_gen_data(common, pad_table, n_per_emotion, n_test);
    if (*tr) return cmd_train(common, ta);
    if (*sy) return cmd_synth(common, sa);
    if (*ev) return cmd_eval(common, eval_models, eval_manifest, eval_modes);
    if (*ex) return cmd_export_pad(common, export_ckpt);
    if (*sv) return cmd_serve(common, serve_ckpt, serve_host, serve_port);
  } catch (const ConfigError& e) {
    std::cerr << "padtts: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "padtts: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
