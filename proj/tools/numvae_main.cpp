// Command-line entry point: one binary, one subcommand per workflow
// stage. Every command echoes its effective configuration to
// resolved_config.txt next to its outputs and exits 0 on success, 2 on
// configuration errors, 3 on data errors, 4 on numerical divergence.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "numvae/checkpoint.hpp"
#include "numvae/cli_io.hpp"
#include "numvae/errors.hpp"
#include "numvae/probes.hpp"
#include "numvae/scenegen.hpp"
#include "numvae/trainer.hpp"

namespace fs = std::filesystem;
using namespace numvae;

namespace {

std::string parent_dir(const std::string& file_path) {
  const fs::path p(file_path);
  return p.has_parent_path() ? p.parent_path().string() : std::string(".");
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> items;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      items.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  items.push_back(cur);
  return items;
}

double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError(what + ": \"" + s + "\" is not a number");
  return v;
}

std::array<double, 3> parse_splits(const std::string& s) {
  const auto items = split_commas(s);
  if (items.size() != 3)
    throw ConfigError("--splits wants train,val,test fractions, got \"" + s +
                      "\"");
  return {parse_double(items[0], "--splits"), parse_double(items[1], "--splits"),
          parse_double(items[2], "--splits")};
}

DetectorCriteria parse_criteria(const std::string& s) {
  DetectorCriteria c;
  if (s.empty()) return c;
  for (const auto& item : split_commas(s)) {
    const size_t eq = item.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--criteria item \"" + item + "\" is not key=value");
    const std::string key = item.substr(0, eq);
    const double value = parse_double(item.substr(eq + 1), "--criteria " + key);
    if (key == "r2")
      c.r2_threshold = value;
    else if (key == "comp")
      c.complementary_max = value;
    else
      throw ConfigError("--criteria: unknown key \"" + key +
                        "\" (expected r2, comp)");
  }
  return c;
}

std::vector<int> parse_dims(const std::string& s) {
  std::vector<int> dims;
  for (const auto& item : split_commas(s)) {
    const double v = parse_double(item, "--dims");
    dims.push_back(static_cast<int>(v));
  }
  if (dims.empty()) throw ConfigError("--dims: empty list");
  return dims;
}

// either "lo..hi" (unit steps, inclusive) or an explicit comma list
std::vector<double> parse_deltas(const std::string& s) {
  const size_t dots = s.find("..");
  if (dots != std::string::npos) {
    const double lo = parse_double(s.substr(0, dots), "--deltas");
    const double hi = parse_double(s.substr(dots + 2), "--deltas");
    if (hi < lo) throw ConfigError("--deltas: range is backwards");
    std::vector<double> deltas;
    for (double v = lo; v <= hi + 1e-12; v += 1.0) deltas.push_back(v);
    return deltas;
  }
  std::vector<double> deltas;
  for (const auto& item : split_commas(s))
    deltas.push_back(parse_double(item, "--deltas"));
  if (deltas.empty()) throw ConfigError("--deltas: empty list");
  return deltas;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

// latents of a dataset directory through a checkpointed model
ProbeDataset latents_for(const std::string& checkpoint_path,
                         const std::string& dataset_dir,
                         const std::string& split) {
  auto model = load_model<float>(checkpoint_path);
  return collect_latents(model, dataset_dir, split);
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string preset = "desk";
  int64_t count = 10000;
  std::string out;
  uint64_t seed = 1;
  std::string bank = "builtin15";
  std::string backgrounds = "builtin";
  std::string splits = "0.8,0.1,0.1";
};

int run_gen_data(const GenDataArgs& a) {
  auto config = GeneratorConfig::make(a.preset);
  config.master_seed = a.seed;
  config.bank = a.bank;
  config.backgrounds = a.backgrounds;
  const auto fractions = parse_splits(a.splits);

  std::vector<ObjectAsset> bank;
  if (a.bank == "builtin15") {
    bank = builtin_asset_bank();
  } else {
    bank = load_asset_bank(a.bank);
    config.num_classes = static_cast<int>(bank.size());
  }
  std::vector<ImageU8> backgrounds;
  const std::vector<ImageU8>* bg_ptr = nullptr;
  if (a.backgrounds != "builtin") {
    backgrounds = load_background_dir(a.backgrounds);
    bg_ptr = &backgrounds;
  }

  ConfigResolver r;
  r.declare("command", "gen-data");
  r.declare("preset", config.preset);
  r.declare("count", std::to_string(a.count));
  r.declare("out", a.out);
  r.declare("master_seed", std::to_string(config.master_seed));
  r.declare("bank", config.bank);
  r.declare("backgrounds", config.backgrounds);
  r.declare("splits", a.splits);
  r.declare("canvas_h", std::to_string(config.canvas_h));
  r.declare("canvas_w", std::to_string(config.canvas_w));
  r.declare("scale_lo", format_g9(config.scale_lo));
  r.declare("scale_hi", format_g9(config.scale_hi));
  r.declare("scale_jitter", format_g9(config.scale_jitter));
  r.declare("single_asset", bool_str(config.single_asset));
  r.declare("allow_overlap", bool_str(config.allow_overlap));
  r.declare("num_classes", std::to_string(config.num_classes));
  r.declare("hflip", bool_str(config.transforms.hflip));
  r.declare("rotation_deg", format_g9(config.transforms.rotation_deg));
  r.declare("color_shift", format_g9(config.transforms.color_shift));
  r.write_resolved(a.out);

  const auto manifest =
      build_dataset(config, a.count, fractions, bank, a.out, bg_ptr);
  std::printf("gen-data: %zu records under %s (N histogram:", manifest.records.size(),
              a.out.c_str());
  for (int64_t c : manifest.class_counts) std::printf(" %lld", static_cast<long long>(c));
  std::printf(")\n");
  return 0;
}

struct IngestArgs {
  std::string root;
  std::string labels;
  std::string out;
  int64_t canvas = 64;
  std::string splits = "0.8,0.1,0.1";
  uint64_t seed = 1;
};

int run_ingest(const IngestArgs& a) {
  ConfigResolver r;
  r.declare("command", "ingest");
  r.declare("root", a.root);
  r.declare("labels", a.labels);
  r.declare("out", a.out);
  r.declare("canvas", std::to_string(a.canvas));
  r.declare("splits", a.splits);
  r.declare("master_seed", std::to_string(a.seed));
  r.write_resolved(a.out);

  const auto manifest = ingest_external_dataset(
      a.root, a.labels, a.out, a.canvas, a.canvas, parse_splits(a.splits), a.seed);
  std::printf("ingest: %zu records under %s\n", manifest.records.size(),
              a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string config_file;
  std::string synthetic;
  std::string natural;
  std::string out;
  std::vector<std::string> overrides;
};

int run_train(const TrainArgs& a) {
  auto resolver = make_train_resolver(a.config_file, a.overrides);
  const auto config = train_config_from(resolver);
  const auto arch = arch_config_from(resolver);
  const auto extractor_spec = extractor_spec_from(resolver);
  resolver.write_resolved(a.out);

  const auto result =
      run_training(config, a.synthetic, a.natural, arch, extractor_spec, a.out);
  std::printf("train: best epoch %d (val loss %.6g); checkpoints %s, %s\n",
              result.best_epoch, result.best_val_loss,
              result.best_checkpoint_path.c_str(),
              result.final_checkpoint_path.c_str());
  return 0;
}

struct ProbeArgs {
  std::string checkpoint;
  std::string manifest;
  std::string criteria = "r2=0.05,comp=0.1";
  std::string out = "report.csv";
  std::string split;
};

int run_probe(const ProbeArgs& a) {
  const auto criteria = parse_criteria(a.criteria);

  ConfigResolver r;
  r.declare("command", "probe");
  r.declare("checkpoint", a.checkpoint);
  r.declare("manifest", a.manifest);
  r.declare("split", a.split);
  r.declare("r2", format_g9(criteria.r2_threshold));
  r.declare("comp", format_g9(criteria.complementary_max));
  r.declare("out", a.out);
  r.write_resolved(parent_dir(a.out));

  const auto probe = latents_for(a.checkpoint, a.manifest, a.split);
  const auto report = probe_all_dimensions(probe, criteria);

  CsvTable table;
  table.header = {"dim",       "beta1",     "beta2", "r_squared",
                  "n_samples", "detector",  "ambiguous"};
  std::vector<std::string> cls(static_cast<size_t>(probe.dim()), "neither");
  std::vector<std::string> amb(static_cast<size_t>(probe.dim()), "false");
  for (int d : report.numerosity_detectors)
    cls[static_cast<size_t>(d)] = "numerosity";
  for (int d : report.area_detectors) cls[static_cast<size_t>(d)] = "area";
  for (int d : report.ambiguous_dims) amb[static_cast<size_t>(d)] = "true";
  for (const auto& [dim, reason] : report.failed_dims)
    cls[static_cast<size_t>(dim)] = "degenerate";
  for (const auto& fit : report.fits) {
    table.rows.push_back({std::to_string(fit.dim_index), format_g9(fit.beta1),
                          format_g9(fit.beta2), format_g9(fit.r_squared),
                          std::to_string(fit.n_samples),
                          cls[static_cast<size_t>(fit.dim_index)],
                          amb[static_cast<size_t>(fit.dim_index)]});
  }
  write_csv(a.out, table);

  std::printf(
      "probe: %lld dims, %zu numerosity detector(s), %zu area detector(s), "
      "%zu ambiguous, %zu degenerate, %zu opposite-sign area pair(s) -> %s\n",
      static_cast<long long>(probe.dim()), report.numerosity_detectors.size(),
      report.area_detectors.size(), report.ambiguous_dims.size(),
      report.failed_dims.size(), report.opposite_sign_area_pairs.size(),
      a.out.c_str());
  return 0;
}

struct ReadoutArgs {
  std::string checkpoint;
  std::string train_dir;
  std::string eval_dir;
  std::string out = "readout.csv";
  std::string train_split;
  std::string eval_split;
  std::string save_model;
  int epochs = 300;
  double lr = 0.05;
  int hidden = 160;
  int layers = 2;
  uint64_t seed = 1;
};

int run_readout(const ReadoutArgs& a) {
  ConfigResolver r;
  r.declare("command", "readout");
  r.declare("checkpoint", a.checkpoint);
  r.declare("train", a.train_dir);
  r.declare("eval", a.eval_dir);
  r.declare("train_split", a.train_split);
  r.declare("eval_split", a.eval_split);
  r.declare("out", a.out);
  r.declare("save_model", a.save_model);
  r.declare("epochs", std::to_string(a.epochs));
  r.declare("lr", format_g9(a.lr));
  r.declare("hidden_units", std::to_string(a.hidden));
  r.declare("hidden_layers", std::to_string(a.layers));
  r.declare("master_seed", std::to_string(a.seed));
  r.write_resolved(parent_dir(a.out));

  auto model = load_model<float>(a.checkpoint);
  const auto train_set = collect_latents(model, a.train_dir, a.train_split);
  const auto eval_set = collect_latents(model, a.eval_dir, a.eval_split);

  ReadoutConfig cfg;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.hidden_units = a.hidden;
  cfg.hidden_layers = a.layers;
  cfg.seed = a.seed;
  const auto readout = train_readout(train_set.latents, train_set.numerosity, cfg);
  if (!a.save_model.empty()) save_readout(a.save_model, readout);

  const auto eval = evaluate_readout(readout, eval_set.latents, eval_set.numerosity);
  for (const auto& w : eval.warnings)
    std::fprintf(stderr, "readout: %s\n", w.c_str());

  CsvTable table;
  table.header = {"label", "ap"};
  const char* labels[5] = {"0", "1", "2", "3", "4+"};
  for (int c = 0; c < 5; ++c)
    table.rows.push_back(
        {labels[c], eval.defined[static_cast<size_t>(c)]
                        ? format_g9(eval.per_class_ap[static_cast<size_t>(c)])
                        : "nan"});
  table.rows.push_back({"mean", format_g9(eval.mean_ap)});
  write_csv(a.out, table);

  std::printf("readout: mean AP %.6g over %lld eval samples -> %s\n",
              eval.mean_ap, static_cast<long long>(eval_set.size()),
              a.out.c_str());
  return 0;
}

struct TraverseArgs {
  std::string checkpoint;
  std::string image;
  std::string dims = "0";
  std::string deltas = "-2..2";
  std::string manifest;  // optional reference set for per-dim stds
  std::string out = "traversal.png";
};

int run_traverse(const TraverseArgs& a) {
  ConfigResolver r;
  r.declare("command", "traverse");
  r.declare("checkpoint", a.checkpoint);
  r.declare("image", a.image);
  r.declare("dims", a.dims);
  r.declare("deltas", a.deltas);
  r.declare("manifest", a.manifest);
  r.declare("out", a.out);
  r.write_resolved(parent_dir(a.out));

  auto model = load_model<float>(a.checkpoint);
  const auto dims = parse_dims(a.dims);
  const auto deltas = parse_deltas(a.deltas);

  Eigen::VectorXd stds = Eigen::VectorXd::Ones(model.config().latent_dim);
  if (!a.manifest.empty())
    stds = dimension_stds(collect_latents(model, a.manifest));

  ImageU8 input = load_png(a.image);
  if (input.h != model.config().input_h || input.w != model.config().input_w)
    input = resize_bilinear(input, model.config().input_h, model.config().input_w);

  const auto grid =
      latent_traversal(model, image_to_tensor<float>(input), dims, deltas, stds);
  save_png(a.out, render_traversal_image(grid));

  // sidecar table: grid layout plus the std unit each delta is scaled by
  CsvTable table;
  table.header = {"row", "col", "dim", "delta", "dim_std"};
  for (size_t i = 0; i < grid.images.size(); ++i) {
    const size_t row = i / deltas.size(), col = i % deltas.size();
    table.rows.push_back({std::to_string(row), std::to_string(col),
                          std::to_string(dims[row]), format_g9(deltas[col]),
                          format_g9(stds(dims[row]))});
  }
  write_csv(a.out + ".csv", table);

  std::printf("traverse: %zu x %zu grid -> %s\n", dims.size(), deltas.size(),
              a.out.c_str());
  return 0;
}

struct ProfileArgs {
  std::string checkpoint;
  std::string manifest;
  int dim = 0;
  int bins = 8;
  std::string split;
  std::string out = "profile.csv";
  std::string plot;
};

int run_profile(const ProfileArgs& a) {
  ConfigResolver r;
  r.declare("command", "profile");
  r.declare("checkpoint", a.checkpoint);
  r.declare("manifest", a.manifest);
  r.declare("dim", std::to_string(a.dim));
  r.declare("bins", std::to_string(a.bins));
  r.declare("split", a.split);
  r.declare("out", a.out);
  r.declare("plot", a.plot);
  r.write_resolved(parent_dir(a.out));

  const auto probe = latents_for(a.checkpoint, a.manifest, a.split);
  const auto profile = response_profile(probe, a.dim, a.bins);

  CsvTable table;
  table.header = {"numerosity", "bin",    "area_lo", "area_hi",
                  "count",      "mean_z", "std_z"};
  const auto& zero = profile.zero_numerosity;
  table.rows.push_back({"0", "", "", "", std::to_string(zero.count),
                        zero.count ? format_g9(zero.mean_z) : "",
                        zero.has_std ? format_g9(zero.std_z) : ""});
  for (size_t n = 0; n < profile.cells.size(); ++n)
    for (size_t b = 0; b < profile.cells[n].size(); ++b) {
      const auto& cell = profile.cells[n][b];
      table.rows.push_back({std::to_string(n + 1), std::to_string(b),
                            format_g9(profile.bin_edges[b]),
                            format_g9(profile.bin_edges[b + 1]),
                            std::to_string(cell.count),
                            cell.count ? format_g9(cell.mean_z) : "",
                            cell.has_std ? format_g9(cell.std_z) : ""});
    }
  write_csv(a.out, table);
  if (!a.plot.empty()) save_png(a.plot, render_profile_image(profile));

  std::printf("profile: dim %d over %d bins -> %s\n", a.dim, a.bins,
              a.out.c_str());
  return 0;
}

struct VerifyArgs {
  std::string manifest;
  int64_t rerender = -1;
  std::string out;
};

int run_verify(const VerifyArgs& a) {
  const std::string manifest_path =
      fs::is_directory(a.manifest)
          ? (fs::path(a.manifest) / "manifest.jsonl").string()
          : a.manifest;

  ConfigResolver r;
  r.declare("command", "verify");
  r.declare("manifest", manifest_path);
  r.declare("rerender", std::to_string(a.rerender));
  r.declare("out", a.out);
  r.write_resolved(parent_dir(a.out.empty() ? manifest_path : a.out));

  const auto report = verify_manifest(manifest_path, a.rerender);
  if (!a.out.empty()) {
    CsvTable table;
    table.header = {"type", "detail"};
    for (const auto& v : report.violations)
      table.rows.push_back({v.type, v.detail});
    write_csv(a.out, table);
  }
  std::printf("verify: %lld records checked, %lld re-rendered, %zu violation(s)\n",
              static_cast<long long>(report.records_checked),
              static_cast<long long>(report.records_rerendered),
              report.violations.size());
  for (const auto& v : report.violations)
    std::printf("  %s: %s\n", v.type.c_str(), v.detail.c_str());
  return report.ok() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerosity VAE workbench"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-data", "synthesize a labeled dataset");
  cmd_gen->add_option("--preset", gen.preset, "desk | probe | warmup");
  cmd_gen->add_option("--count", gen.count, "number of scenes");
  cmd_gen->add_option("--out", gen.out, "output directory")->required();
  cmd_gen->add_option("--seed", gen.seed, "master seed");
  cmd_gen->add_option("--bank", gen.bank, "asset directory or 'builtin15'");
  cmd_gen->add_option("--backgrounds", gen.backgrounds,
                      "background directory or 'builtin'");
  cmd_gen->add_option("--splits", gen.splits, "train,val,test fractions");

  IngestArgs ing;
  auto* cmd_ing = app.add_subcommand("ingest", "import an external labeled set");
  cmd_ing->add_option("--root", ing.root, "image root directory")->required();
  cmd_ing->add_option("--labels", ing.labels, "CSV of filename,label")->required();
  cmd_ing->add_option("--out", ing.out, "output directory")->required();
  cmd_ing->add_option("--canvas", ing.canvas, "re-encode size");
  cmd_ing->add_option("--splits", ing.splits, "train,val,test fractions");
  cmd_ing->add_option("--seed", ing.seed, "split-assignment seed");

  TrainArgs tr;
  auto* cmd_tr = app.add_subcommand("train", "train the VAE");
  cmd_tr->add_option("--config", tr.config_file, "key=value config file");
  cmd_tr->add_option("--synthetic", tr.synthetic, "synthetic dataset dir")
      ->required();
  cmd_tr->add_option("--natural", tr.natural, "natural dataset dir (optional)");
  cmd_tr->add_option("--out", tr.out, "run directory")->required();
  cmd_tr->add_option("--set", tr.overrides, "config overrides (key=value)");

  ProbeArgs pr;
  auto* cmd_pr = app.add_subcommand("probe", "regress latents on (log N, log A)");
  cmd_pr->add_option("--checkpoint", pr.checkpoint, "model checkpoint")->required();
  cmd_pr->add_option("--manifest", pr.manifest, "probe dataset dir")->required();
  cmd_pr->add_option("--criteria", pr.criteria, "e.g. r2=0.05,comp=0.1");
  cmd_pr->add_option("--out", pr.out, "report csv path");
  cmd_pr->add_option("--split", pr.split, "restrict to a split (default all)");

  ReadoutArgs ro;
  auto* cmd_ro = app.add_subcommand("readout", "train/evaluate the numerosity readout");
  cmd_ro->add_option("--checkpoint", ro.checkpoint, "model checkpoint")->required();
  cmd_ro->add_option("--train", ro.train_dir, "training dataset dir")->required();
  cmd_ro->add_option("--eval", ro.eval_dir, "evaluation dataset dir")->required();
  cmd_ro->add_option("--out", ro.out, "per-class AP csv path");
  cmd_ro->add_option("--train-split", ro.train_split, "training split filter");
  cmd_ro->add_option("--eval-split", ro.eval_split, "evaluation split filter");
  cmd_ro->add_option("--save-model", ro.save_model, "persist the readout weights");
  cmd_ro->add_option("--epochs", ro.epochs, "training epochs");
  cmd_ro->add_option("--lr", ro.lr, "learning rate");
  cmd_ro->add_option("--hidden", ro.hidden, "hidden units per layer");
  cmd_ro->add_option("--layers", ro.layers, "hidden layer count");
  cmd_ro->add_option("--seed", ro.seed, "init seed");

  TraverseArgs tv;
  auto* cmd_tv = app.add_subcommand("traverse", "decode latent traversals");
  cmd_tv->add_option("--checkpoint", tv.checkpoint, "model checkpoint")->required();
  cmd_tv->add_option("--image", tv.image, "input image (png)")->required();
  cmd_tv->add_option("--dims", tv.dims, "latent dims, e.g. 3,77");
  cmd_tv->add_option("--deltas", tv.deltas, "e.g. -2..2 or -1,0,1");
  cmd_tv->add_option("--manifest", tv.manifest,
                     "reference dataset for per-dim stds (default: unit)");
  cmd_tv->add_option("--out", tv.out, "grid png path");

  ProfileArgs pf;
  auto* cmd_pf = app.add_subcommand("profile", "response profile of one latent dim");
  cmd_pf->add_option("--checkpoint", pf.checkpoint, "model checkpoint")->required();
  cmd_pf->add_option("--manifest", pf.manifest, "probe dataset dir")->required();
  cmd_pf->add_option("--dim", pf.dim, "latent dimension")->required();
  cmd_pf->add_option("--bins", pf.bins, "log-area bins");
  cmd_pf->add_option("--split", pf.split, "restrict to a split (default all)");
  cmd_pf->add_option("--out", pf.out, "profile csv path");
  cmd_pf->add_option("--plot", pf.plot, "optional plot png path");

  VerifyArgs vf;
  auto* cmd_vf = app.add_subcommand("verify", "audit a dataset manifest");
  cmd_vf->add_option("--manifest", vf.manifest, "manifest file or dataset dir")
      ->required();
  cmd_vf->add_option("--rerender", vf.rerender,
                     "records to re-render (-1 = all, 0 = none)");
  cmd_vf->add_option("--out", vf.out, "optional violation csv path");

  try {
    app.parse(argc, argv);
    if (*cmd_gen) return run_gen_data(gen);
    if (*cmd_ing) return run_ingest(ing);
    if (*cmd_tr) return run_train(tr);
    if (*cmd_pr) return run_probe(pr);
    if (*cmd_ro) return run_readout(ro);
    if (*cmd_tv) return run_traverse(tv);
    if (*cmd_pf) return run_profile(pf);
    if (*cmd_vf) return run_verify(vf);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 4;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
