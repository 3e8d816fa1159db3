#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "milpath/checkpoint.hpp"
#include "milpath/error.hpp"
#include "milpath/morpho.hpp"
#include "milpath/synth.hpp"
#include "milpath/tiler.hpp"
#include "milpath/trainer.hpp"
#include "milpath/viz.hpp"

namespace milpath::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

bool given_on_command_line(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == flag || a.rfind(flag + "=", 0) == 0;
  });
}

// Splices a flat JSON config (keys are long flag names; '_' and '-' are
// interchangeable) into the argument list. Flags already present win.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  for (const CLI::App* s : app.get_subcommands({})) {
    if (s->get_name() == args.front()) sub = s;
  }
  if (sub == nullptr) return args;
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;

  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot read config " + path);
  nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorKind::kFormat, path + ": config must be a JSON object");

  std::vector<std::string> extra;
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    const std::string flag = "--" + name;
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    if (opt == nullptr || name == "config" || name == "help") {
      fail(ErrorKind::kValidation, path + ": unknown key '" + key + "' for " + sub->get_name());
    }
    if (given_on_command_line(args, flag)) continue;
    auto scalar = [&](const nlohmann::json& v) {
      if (v.is_object() || v.is_array() || v.is_null()) {
        fail(ErrorKind::kValidation, path + ": key '" + key + "' must be a scalar");
      }
      return v.is_string() ? v.get<std::string>() : v.dump();
    };
    if (opt->get_expected_max() == 0) {
      if (!value.is_boolean()) fail(ErrorKind::kValidation, path + ": key '" + key + "' must be true or false");
      if (value.get<bool>()) extra.push_back(flag);
      continue;
    }
    extra.push_back(flag);
    extra.push_back(scalar(value));
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

std::string env_name(const std::string& long_name) {
  std::string s = "MILPATH_";
  for (char c : long_name) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

void bind_env(CLI::App* app) {
  for (CLI::Option* opt : app->get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help" || names.front() == "config") continue;
    opt->envname(env_name(names.front()));
  }
}

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& description) {
  CLI::App* sub = app.add_subcommand(name, description);
  sub->add_option_function<std::string>("--config", [](const std::string&) {},
                                        "JSON file with flag values (keys are long flag names)");
  return sub;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::kIo, "cannot write " + path.string());
  f << text;
  if (!f) fail(ErrorKind::kIo, "write failed: " + path.string());
}

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) fail(ErrorKind::kIo, "no such file: " + path);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

// Effective option values plus input digests, written next to every output.
void write_run_config(const CLI::App* sub, const fs::path& out,
                      const std::vector<std::string>& inputs) {
  ordered_json j;
  j["command"] = sub->get_name();
  auto& options = j["options"] = ordered_json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help" || names.front() == "config") continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      for (std::size_t i = 0; i < r.size(); ++i) value += (i ? " " : "") + r[i];
    } else {
      value = opt->get_default_str();
    }
    auto parsed = nlohmann::ordered_json::parse(value, nullptr, false);
    options[names.front()] =
        (!parsed.is_discarded() && (parsed.is_number() || parsed.is_boolean())) ? parsed
                                                                                  : ordered_json(value);
  }
  auto& digests = j["inputs"] = ordered_json::object();
  for (const auto& path : inputs) digests[path] = "fnv1a64:" + file_digest(path);
  write_text(out / "run_config.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// tile

struct TileOptions {
  std::string input;
  std::string out;
  std::string slide_id;
  std::string mask_dir;
  TilingConfig tiling;
  bool no_patches = false;
};

void add_tile(CLI::App& app, TileOptions& o) {
  CLI::App* sub = add_command(app, "tile", "Grid a slide image and filter white, background and low-cellularity patches");
  sub->add_option("--input", o.input, "Slide image (PPM P6)")->required();
  sub->add_option("--out", o.out, "Output directory")->required();
  sub->add_option("--slide-id", o.slide_id, "Slide id (default: input file stem)");
  sub->add_option("--mask-dir", o.mask_dir, "Directory of <slide>_<x>_<y>.pgm label masks");
  sub->add_option("--patch-size", o.tiling.patch_size, "Patch edge in pixels");
  sub->add_option("--white-mean", o.tiling.white_mean_threshold, "Channel mean counted as white");
  sub->add_option("--white-fraction", o.tiling.white_fraction_threshold,
                  "Patch is white above this fraction of white pixels");
  sub->add_option("--tissue-saturation", o.tiling.tissue_saturation_threshold,
                  "HSV saturation counted as tissue");
  sub->add_option("--min-nuclei", o.tiling.min_nuclei_exclusive,
                  "Keep patches with more nuclei than this");
  sub->add_flag("--no-patches", o.no_patches, "Do not write kept patch images");
}

int run_tile(const CLI::App* sub, TileOptions o, std::ostream& out) {
  o.tiling.validate();
  require_file(o.input);
  const RgbImage image = read_ppm(o.input);
  if (o.slide_id.empty()) o.slide_id = fs::path(o.input).stem().string();
  const fs::path dir = o.out;
  ensure_dir(dir);

  MaskProvider masks;
  if (!o.mask_dir.empty()) {
    masks = [&](const PatchRef& p) -> std::optional<LabelMask> {
      const fs::path f = fs::path(o.mask_dir) / (patch_file_stem(o.slide_id, p) + ".pgm");
      if (!fs::exists(f)) return std::nullopt;
      return read_label_mask(f);
    };
  }
  const TileResult result = tile_image(image, o.tiling, masks);

  std::string csv = "slide_id,x,y,kept,reason\n";
  for (const auto& d : result.decisions) {
    csv += o.slide_id + "," + std::to_string(d.patch.x) + "," + std::to_string(d.patch.y) + "," +
           (d.kept() ? "1" : "0") + "," + std::string(to_string(d.reason)) + "\n";
  }
  write_text(dir / (o.slide_id + "_patches.csv"), csv);

  if (!o.no_patches) {
    ensure_dir(dir / "patches");
    for (const auto& d : result.decisions) {
      if (!d.kept()) continue;
      const int s = static_cast<int>(d.patch.size);
      write_ppm(image.crop(static_cast<int>(d.patch.x), static_cast<int>(d.patch.y), s, s),
                dir / "patches" / (patch_file_stem(o.slide_id, d.patch) + ".ppm"));
    }
  }

  const auto& r = result.report;
  ordered_json j;
  j["slide_id"] = o.slide_id;
  j["total_grid"] = r.total_grid;
  j["kept"] = r.kept;
  j["rejected_white"] = r.rejected_white;
  j["rejected_background"] = r.rejected_background;
  j["rejected_low_cellularity"] = r.rejected_low_cellularity;
  write_text(dir / "tile_report.json", j.dump(2) + "\n");
  write_run_config(sub, dir, {o.input});

  out << o.slide_id << ": " << r.kept << " of " << r.total_grid << " patches kept (white "
      << r.rejected_white << ", background " << r.rejected_background << ", low cellularity "
      << r.rejected_low_cellularity << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string manifest;
  std::string out;
  CvConfig cv;
  std::string activation = "relu";
  std::string classifier_mode = "per_class";
  std::string positive = "ABC";
  bool quiet = false;
};

void add_model_options(CLI::App* sub, ModelConfig& model, std::string& activation,
                       std::string& mode) {
  sub->add_option("--hidden-dim", model.hidden_dim, "Compressed embedding width");
  sub->add_option("--attention-dim", model.attention_dim, "Attention backbone width");
  sub->add_option("--activation", activation, "Activation after compression")
      ->check(CLI::IsMember({"relu", "identity"}));
  sub->add_option("--classifier-mode", mode, "One head per class or a shared head")
      ->check(CLI::IsMember({"per_class", "shared"}));
}

void add_train(CLI::App& app, TrainOptions& o) {
  CLI::App* sub = add_command(app, "train", "Cross-validated training on a slide manifest");
  auto& t = o.cv.train;
  sub->add_option("--manifest", o.manifest, "Slide manifest CSV")->required();
  sub->add_option("--out", o.out, "Output directory")->required();
  sub->add_option("--seed", t.seed, "Seed for folds, initialization, shuffling and dropout");
  sub->add_option("--lr", t.learning_rate, "AdamW learning rate");
  sub->add_option("--weight-decay", t.weight_decay, "Decoupled weight decay");
  sub->add_option("--beta1", t.beta1, "First-moment decay");
  sub->add_option("--beta2", t.beta2, "Second-moment decay");
  sub->add_option("--epsilon", t.epsilon, "AdamW epsilon");
  sub->add_option("--dropout", t.dropout, "Dropout rate");
  sub->add_option("--max-epochs", t.max_epochs, "Epoch limit per fold");
  sub->add_option("--patience", t.patience, "Epochs without validation improvement before stopping");
  sub->add_option("--folds", o.cv.n_folds, "Number of cross-validation folds");
  sub->add_option("--train-ratio", o.cv.ratios.train, "Training share per class");
  sub->add_option("--val-ratio", o.cv.ratios.val, "Validation share per class");
  sub->add_option("--test-ratio", o.cv.ratios.test, "Test share per class");
  add_model_options(sub, o.cv.model, o.activation, o.classifier_mode);
  sub->add_option("--positive", o.positive, "Positive class for AUC/PPV/NPV")
      ->check(CLI::IsMember({"ABC", "GCB"}, CLI::ignore_case));
  sub->add_option("--threshold", o.cv.threshold, "Decision threshold on the positive probability");
  sub->add_option("--jobs", o.cv.jobs, "Folds trained concurrently");
  sub->add_flag("--quiet", o.quiet, "No progress output");
}

std::vector<std::string> manifest_inputs(const std::string& manifest_path, const Manifest& m) {
  std::vector<std::string> inputs{manifest_path};
  for (const auto& row : m.rows) inputs.push_back(row.embedding_path.string());
  return inputs;
}

std::string scores_csv(const std::vector<SlideScore>& scores) {
  std::string csv = "slide_id,label,p_abc,p_gcb,predicted\n";
  for (const auto& s : scores) {
    const Subtype pred = s.probs(1) > s.probs(0) ? Subtype::kGcb : Subtype::kAbc;
    csv += s.slide_id + "," + (s.label ? std::string(to_string(*s.label)) : "") + "," +
           fmt(s.probs(0)) + "," + fmt(s.probs(1)) + "," + std::string(to_string(pred)) + "\n";
  }
  return csv;
}

int run_train(const CLI::App* sub, TrainOptions o, std::ostream& out, std::ostream& err) {
  o.cv.model.activation = parse_activation(o.activation);
  o.cv.model.classifier_mode = parse_classifier_mode(o.classifier_mode);
  o.cv.model.dropout = o.cv.train.dropout;
  o.cv.positive = parse_subtype(o.positive);
  o.cv.train.validate();
  require(o.cv.jobs >= 1, "--jobs must be at least 1");
  require(o.cv.n_folds >= 1, "--folds must be at least 1");
  require_file(o.manifest);

  const Manifest manifest = read_manifest(o.manifest);
  require(!manifest.rows.empty(), "manifest has no slides");
  const auto counts = manifest.class_counts();
  require(counts[0] > 0 && counts[1] > 0, "manifest must contain both ABC and GCB slides");
  const BagStore bags = load_bags(manifest);

  const fs::path dir = o.out;
  ensure_dir(dir);
  const CvReport report = run_cross_validation(manifest, bags, o.cv, o.quiet ? nullptr : &err);

  std::string metrics = metrics_csv_header();
  for (const auto& f : report.folds) {
    const fs::path fold_dir = dir / ("fold_" + std::to_string(f.plan.fold_index));
    ensure_dir(fold_dir);
    write_checkpoint(f.trained.params, fold_dir / "model.milp");
    write_text(fold_dir / "train_log.csv", train_log_csv(f.trained.log));
    write_text(fold_dir / "test_scores.csv", scores_csv(f.test_scores));
    ordered_json split;
    split["train"] = f.plan.train_ids;
    split["val"] = f.plan.val_ids;
    split["test"] = f.plan.test_ids;
    write_text(fold_dir / "split.json", split.dump(2) + "\n");
    metrics += metrics_csv_row(std::to_string(f.plan.fold_index), f.test);
  }
  write_text(dir / "metrics.csv", metrics);
  write_text(dir / "cv_report.json", cv_report_json(report, o.cv));
  write_run_config(sub, dir, manifest_inputs(o.manifest, manifest));

  auto line = [&](const char* name, const MetricSummary& s) {
    out << name << "  mean " << fmt(s.mean) << "  std " << fmt(s.std) << "  max " << fmt(s.max);
    if (s.undefined > 0) out << "  (" << s.undefined << " undefined)";
    out << '\n';
  };
  line("AUC", report.auc);
  line("ACC", report.acc);
  line("PPV", report.ppv);
  line("NPV", report.npv);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string manifest;
  std::string checkpoint;
  std::string out;
  std::string positive = "ABC";
  double threshold = 0.5;
};

void add_eval(CLI::App& app, EvalOptions& o) {
  CLI::App* sub = add_command(app, "eval", "Score every manifest slide with a checkpoint");
  sub->add_option("--manifest", o.manifest, "Slide manifest CSV")->required();
  sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint (.milp)")->required();
  sub->add_option("--out", o.out, "Output directory")->required();
  sub->add_option("--positive", o.positive, "Positive class")
      ->check(CLI::IsMember({"ABC", "GCB"}, CLI::ignore_case));
  sub->add_option("--threshold", o.threshold, "Decision threshold on the positive probability");
}

int run_eval(const CLI::App* sub, const EvalOptions& o, std::ostream& out) {
  const Subtype positive = parse_subtype(o.positive);
  require_file(o.manifest);
  require_file(o.checkpoint);
  const Manifest manifest = read_manifest(o.manifest);
  require(!manifest.rows.empty(), "manifest has no slides");
  const MilParams params = read_checkpoint(o.checkpoint);
  const BagStore bags = load_bags(manifest);

  std::vector<std::string> ids;
  for (const auto& row : manifest.rows) {
    const auto& bag = bags.at(row.slide_id);
    require(bag.dim() == params.config.input_dim,
            "slide '" + row.slide_id + "' has embedding width " + std::to_string(bag.dim()) +
                " but the checkpoint expects " + std::to_string(params.config.input_dim));
    ids.push_back(row.slide_id);
  }
  const auto scores = score_bags(params, bags, ids);
  const auto [s, p] = positive_scores(scores, positive);
  const EvalResult r = evaluate(s, p, o.threshold);

  const fs::path dir = o.out;
  ensure_dir(dir);
  write_text(dir / "scores.csv", scores_csv(scores));
  write_text(dir / "metrics.csv", metrics_csv_header() + metrics_csv_row("all", r));
  auto inputs = manifest_inputs(o.manifest, manifest);
  inputs.push_back(o.checkpoint);
  write_run_config(sub, dir, inputs);

  out << "slides " << scores.size() << "  AUC " << fmt(r.auc) << "  ACC " << fmt(r.acc) << "  PPV "
      << fmt(r.ppv) << "  NPV " << fmt(r.npv) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// heatmap

struct HeatmapOptions {
  std::string bag;
  std::string checkpoint;
  std::string thumbnail;
  std::string out;
  int downscale = 32;
  int k = 10;
  std::string branch = "predicted";
};

void add_heatmap(CLI::App& app, HeatmapOptions& o) {
  CLI::App* sub = add_command(app, "heatmap", "Attention heatmap and top-k patches for one slide");
  sub->add_option("--bag", o.bag, "Slide embeddings (.bag)")->required();
  sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint (.milp)")->required();
  sub->add_option("--thumbnail", o.thumbnail, "Slide thumbnail (PPM P6)")->required();
  sub->add_option("--out", o.out, "Output directory")->required();
  sub->add_option("--downscale", o.downscale, "Level-0 pixels per thumbnail pixel");
  sub->add_option("--k", o.k, "Number of top-attention patches");
  sub->add_option("--branch", o.branch, "Attention branch: predicted, ABC or GCB")
      ->check(CLI::IsMember({"predicted", "ABC", "GCB"}, CLI::ignore_case));
}

int run_heatmap(const CLI::App* sub, const HeatmapOptions& o, std::ostream& out) {
  require(o.k >= 1, "--k must be at least 1");
  require(o.downscale >= 1, "--downscale must be at least 1");
  require_file(o.bag);
  require_file(o.checkpoint);
  require_file(o.thumbnail);
  const SlideBag bag = read_embedding_file(o.bag);
  const MilParams params = read_checkpoint(o.checkpoint);
  require(bag.dim() == params.config.input_dim,
          "bag has embedding width " + std::to_string(bag.dim()) + " but the checkpoint expects " +
              std::to_string(params.config.input_dim));
  const RgbImage thumb = read_ppm(o.thumbnail);

  const auto trace = forward(bag, params, ForwardMode::eval());
  const Subtype predicted = trace.probs(1) > trace.probs(0) ? Subtype::kGcb : Subtype::kAbc;
  std::string b = o.branch;
  std::transform(b.begin(), b.end(), b.begin(), [](unsigned char c) { return std::tolower(c); });
  const Subtype cls = b == "predicted" ? predicted : parse_subtype(b);

  const AttentionMap map = make_attention_map(bag.slide_id, bag.patches, trace.attention, class_index(cls));
  const RgbImage heat = render_heatmap(map, thumb, o.downscale);

  const fs::path dir = o.out;
  ensure_dir(dir);
  write_ppm(heat, dir / heatmap_file_name(bag.slide_id, cls));
  write_text(dir / (bag.slide_id + "_topk_" + std::string(to_string(cls)) + ".csv"),
             top_k_csv(top_k_patches(map, o.k), class_index(cls)));
  write_run_config(sub, dir, {o.bag, o.checkpoint, o.thumbnail});

  out << bag.slide_id << ": p(ABC) " << fmt(trace.probs(0)) << "  p(GCB) " << fmt(trace.probs(1))
      << "  predicted " << to_string(predicted) << "  branch " << to_string(cls) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// morpho

struct MorphoOptions {
  std::string patches;
  std::string masks;
  std::string labels;
  std::string out;
};

void add_morpho(CLI::App& app, MorphoOptions& o) {
  CLI::App* sub = add_command(app, "morpho", "Nuclear morphometry and ABC vs GCB group statistics");
  sub->add_option("--patches", o.patches, "Directory of <slide>_<x>_<y>.ppm patch images")->required();
  sub->add_option("--masks", o.masks, "Directory of <slide>_<x>_<y>.pgm label masks")->required();
  sub->add_option("--labels", o.labels, "CSV with slide_id and label columns (a manifest works)")
      ->required();
  sub->add_option("--out", o.out, "Output directory")->required();
}

std::map<std::string, Subtype, std::less<>> read_label_table(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot read " + path);
  auto split = [](std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  std::string line;
  if (!std::getline(f, line)) fail(ErrorKind::kFormat, path + ": empty label table");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const auto header = split(line);
  const auto id_col = std::find(header.begin(), header.end(), "slide_id") - header.begin();
  const auto label_col = std::find(header.begin(), header.end(), "label") - header.begin();
  if (id_col == static_cast<long>(header.size()) || label_col == static_cast<long>(header.size())) {
    fail(ErrorKind::kFormat, path + ": header needs slide_id and label columns");
  }
  std::map<std::string, Subtype, std::less<>> table;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    const auto cells = split(line);
    if (cells.empty() || (cells.size() == 1 && cells[0].empty())) continue;
    require(static_cast<long>(cells.size()) > std::max(id_col, label_col),
            path + ":" + std::to_string(line_no) + ": missing columns");
    const auto& id = cells[static_cast<std::size_t>(id_col)];
    require(table.emplace(id, parse_subtype(cells[static_cast<std::size_t>(label_col)])).second,
            path + ":" + std::to_string(line_no) + ": duplicate slide_id '" + id + "'");
  }
  return table;
}

int run_morpho(const CLI::App* sub, const MorphoOptions& o, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(o.patches)) fail(ErrorKind::kIo, "no such directory: " + o.patches);
  if (!fs::is_directory(o.masks)) fail(ErrorKind::kIo, "no such directory: " + o.masks);
  require_file(o.labels);
  const auto labels = read_label_table(o.labels);

  std::vector<fs::path> mask_files;
  for (const auto& entry : fs::directory_iterator(o.masks)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") mask_files.push_back(entry.path());
  }
  std::sort(mask_files.begin(), mask_files.end());

  std::vector<NucleusRecord> nuclei[kNumClasses];
  std::vector<PatchAggregate> patches[kNumClasses];
  std::string nucleus_csv = nucleus_csv_header();
  std::string patch_csv =
      "slide_id,x,y,label,nucleus_count,nc_ratio,mean_area,mean_perimeter,mean_circularity,"
      "mean_aspect_ratio,mean_solidity,mean_rb_ratio\n";
  int skipped = 0;
  for (const auto& mask_path : mask_files) {
    const auto parsed = parse_patch_file_stem(mask_path.stem().string());
    const auto it = parsed ? labels.find(parsed->first) : labels.end();
    if (it == labels.end()) {
      ++skipped;
      continue;
    }
    const fs::path image_path = fs::path(o.patches) / (mask_path.stem().string() + ".ppm");
    if (!fs::exists(image_path)) fail(ErrorKind::kIo, "no patch image for mask " + mask_path.string());
    const LabelMask mask = read_label_mask(mask_path);
    const RgbImage image = read_ppm(image_path);
    PatchRef ref = parsed->second;
    ref.size = static_cast<std::uint32_t>(mask.width);
    const auto records = nucleus_features(mask, image, parsed->first, ref);
    PatchAggregate agg = patch_aggregate(mask, records);
    agg.slide_id = parsed->first;
    agg.patch = ref;

    const int c = class_index(it->second);
    for (const auto& r : records) nucleus_csv += nucleus_csv_row(r);
    patch_csv += agg.slide_id + "," + std::to_string(ref.x) + "," + std::to_string(ref.y) + "," +
                 std::string(to_string(it->second)) + "," + std::to_string(agg.nucleus_count) + "," +
                 fmt(agg.nc_ratio) + "," + fmt(agg.mean_area) + "," + fmt(agg.mean_perimeter) + "," +
                 fmt(agg.mean_circularity) + "," + fmt(agg.mean_aspect_ratio) + "," +
                 fmt(agg.mean_solidity) + "," + fmt(agg.mean_rb_ratio) + "\n";
    nuclei[c].insert(nuclei[c].end(), records.begin(), records.end());
    patches[c].push_back(std::move(agg));
  }
  if (skipped > 0) err << "skipped " << skipped << " mask(s) without a labelled slide\n";

  const GroupStats stats = compare_groups(nuclei[0], nuclei[1], patches[0], patches[1]);
  const fs::path dir = o.out;
  ensure_dir(dir);
  write_text(dir / "nuclei.csv", nucleus_csv);
  write_text(dir / "patches.csv", patch_csv);
  write_text(dir / "group_stats.json", group_stats_json(stats));
  write_run_config(sub, dir, {o.labels});

  out << "nuclei ABC " << nuclei[0].size() << "  GCB " << nuclei[1].size() << "  patches ABC "
      << patches[0].size() << "  GCB " << patches[1].size() << '\n';
  for (const auto& f : stats.features) {
    out << "  " << f.feature << ": ABC " << fmt(f.abc.mean) << "  GCB " << fmt(f.gcb.mean)
        << "  p " << (f.test ? fmt(f.test->p) : "NA") << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  SynthConfig cfg;
  std::string out;
};

void add_synth(CLI::App& app, SynthOptions& o) {
  CLI::App* sub = add_command(app, "synth", "Write a deterministic synthetic corpus");
  auto& c = o.cfg;
  sub->add_option("--out", o.out, "Output directory")->required();
  sub->add_option("--seed", c.seed, "Corpus seed");
  sub->add_option("--slides", c.slides, "Number of slides");
  sub->add_option("--abc-fraction", c.abc_fraction, "Share of ABC slides");
  sub->add_option("--dim", c.dim, "Embedding width");
  sub->add_option("--min-patches", c.min_patches, "Fewest patches per slide");
  sub->add_option("--max-patches", c.max_patches, "Most patches per slide");
  sub->add_option("--signal-strength", c.signal_strength,
                  "Shift of GCB signal patches along the planted direction");
  sub->add_option("--signal-fraction", c.signal_fraction, "Share of GCB patches carrying the signal");
  sub->add_option("--morpho-patches", c.morpho_patches, "Patches per slide with image and mask files");
}

int run_synth(const CLI::App* sub, const SynthOptions& o, std::ostream& out) {
  o.cfg.validate();
  const Manifest m = write_synth_corpus(o.cfg, o.out);
  write_run_config(sub, o.out, {});
  const auto counts = m.class_counts();
  out << "wrote " << m.rows.size() << " slides (ABC " << counts[0] << ", GCB " << counts[1]
      << ") to " << o.out << '\n';
  return kExitOk;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return kExitIo;
    case ErrorKind::kNumeric: return kExitNumeric;
    default: return kExitValidation;
  }
}

}  // namespace

std::string file_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot read " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (f.read(buf, sizeof buf) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Whole-slide ABC/GCB attention MIL toolkit", "milpath"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  TileOptions tile;
  TrainOptions train;
  EvalOptions eval;
  HeatmapOptions heatmap;
  MorphoOptions morpho;
  SynthOptions synth;
  add_tile(app, tile);
  add_train(app, train);
  add_eval(app, eval);
  add_heatmap(app, heatmap);
  add_morpho(app, morpho);
  add_synth(app, synth);
  for (CLI::App* sub : app.get_subcommands({})) bind_env(sub);

  try {
    const std::vector<std::string> expanded = expand_config(app, args);
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (dynamic_cast<const CLI::FileError*>(&e) != nullptr) return kExitIo;
    return kExitValidation;
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    const std::string& name = sub->get_name();
    if (name == "tile") return run_tile(sub, tile, out);
    if (name == "train") return run_train(sub, train, out, err);
    if (name == "eval") return run_eval(sub, eval, out);
    if (name == "heatmap") return run_heatmap(sub, heatmap, out);
    if (name == "morpho") return run_morpho(sub, morpho, out, err);
    if (name == "synth") return run_synth(sub, synth, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error (io): " << e.what() << '\n';
    return kExitIo;
  }
  return kExitValidation;
}

}  // namespace milpath::cli
