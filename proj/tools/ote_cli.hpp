#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage error (message and
// synopsis on the error stream), 2 failure while running.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ote/config.hpp"
#include "ote/degrade.hpp"
#include "ote/eval.hpp"
#include "ote/pairing.hpp"
#include "ote/png_io.hpp"
#include "ote/trainer.hpp"

namespace ote::cli {

namespace fs = std::filesystem;

/// Every tunable the tool knows, read from one key=value file. Unknown keys
/// anywhere in the file are rejected.
struct ToolConfig {
  TrainConfig train = TrainConfig::desk();
  CorpusSpec corpus;
  ClassifierTrainConfig quality;
  ClassifierTrainConfig dr;
  std::uint64_t seed = 0;
};

inline void read_classifier(const KeyValues& kv, const std::string& prefix, ClassifierTrainConfig& c) {
  kv.get(prefix + "epochs", c.epochs);
  kv.get(prefix + "batch_size", c.batch_size);
  kv.get(prefix + "lr", c.lr);
  kv.get(prefix + "image_side", c.image_side);
  kv.get(prefix + "base_channels", c.spec.base_channels);
  kv.get(prefix + "conv_layers", c.spec.conv_layers);
}

inline ToolConfig load_tool_config(const std::optional<fs::path>& path, std::optional<std::uint64_t> seed) {
  ToolConfig t;
  t.dr.epochs = 20;
  if (path) {
    const KeyValues kv = KeyValues::load(*path);
    t.train = train_config_from(kv);
    kv.get("synth.side", t.corpus.synth.side);
    kv.get("synth.vessel_count", t.corpus.synth.vessel_count);
    kv.get("synth.lesion_base_count", t.corpus.synth.lesion_base_count);
    kv.get("degrade.illumination_strength", t.corpus.degradation.illumination_strength);
    kv.get("degrade.blur_sigma", t.corpus.degradation.blur_sigma);
    kv.get("degrade.artifact_count", t.corpus.degradation.artifact_count);
    kv.get("degrade.artifact_radius_min", t.corpus.degradation.artifact_radius_min);
    kv.get("degrade.artifact_radius_max", t.corpus.degradation.artifact_radius_max);
    read_classifier(kv, "quality.", t.quality);
    read_classifier(kv, "dr.", t.dr);
    kv.reject_unused();
  }
  if (seed) t.train.seed = *seed;
  t.seed = t.train.seed;
  t.corpus.seed = t.seed;
  t.quality.seed = derive_seed(t.seed, 31);
  t.dr.seed = derive_seed(t.seed, 32);
  return t;
}

/// PNG files in a directory, sorted by name.
inline std::vector<fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FileNotFound("no such directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw InvalidArgument("no .png images in " + dir.string());
  return out;
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw WriteFailure("cannot create directory " + dir.string());
}

inline std::map<std::string, int> grades_of(const Records& records) {
  std::map<std::string, int> g;
  for (const auto& r : records) g[r.id] = r.dr_grade;
  return g;
}

struct Common {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
};

inline void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key = value configuration file");
  sub->add_option("--seed", c.seed, "random seed (overrides the config)");
}

inline std::optional<fs::path> as_path(const std::optional<std::string>& s) {
  if (!s) return std::nullopt;
  return fs::path(*s);
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unpaired retinal image enhancement: synthesis, training, enhancement, evaluation", "ote"};
  app.require_subcommand(1);
  Common common;

  // synth
  int n_per_grade = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "build a synthetic clean/degraded corpus with manifest and pairs");
  synth->add_option("--n-per-grade", n_per_grade, "clean images per DR grade")->required()->check(CLI::PositiveNumber);
  synth->add_option("--out", synth_out, "output directory")->required();
  add_common(synth, common);

  // degrade
  std::string degrade_in, degrade_out;
  auto* degr = app.add_subcommand("degrade", "apply the degradation model to a PNG or a directory of PNGs");
  degr->add_option("--in", degrade_in, "input image or directory")->required();
  degr->add_option("--out", degrade_out, "output image or directory")->required();
  add_common(degr, common);

  // train
  std::string train_manifest, train_out;
  std::optional<std::string> train_resume, train_profile;
  std::optional<int> train_epochs;
  auto* trn = app.add_subcommand("train", "train the generator on a manifest (Reject inputs, Good targets)");
  trn->add_option("--manifest", train_manifest, "manifest CSV")->required();
  trn->add_option("--out", train_out, "run directory for checkpoints and loss.csv")->required();
  trn->add_option("--resume", train_resume, "checkpoint to continue from");
  trn->add_option("--epochs", train_epochs, "override the epoch count")->check(CLI::PositiveNumber);
  trn->add_option("--profile", train_profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  add_common(trn, common);

  // enhance
  std::optional<std::string> enh_ckpt, enh_manifest, enh_in;
  std::string enh_out, enh_quality = "Reject";
  bool enh_untrained = false;
  auto* enh = app.add_subcommand("enhance", "run a generator over images, writing <id>.png");
  auto* ck = enh->add_option("--checkpoint", enh_ckpt, "trained checkpoint (latest.ckpt or checkpoint_epochNNNN.ckpt)");
  auto* un = enh->add_flag("--untrained", enh_untrained, "use a freshly initialized generator (the identity map)");
  ck->excludes(un);
  auto* em = enh->add_option("--manifest", enh_manifest, "manifest; records of --quality are enhanced");
  auto* ei = enh->add_option("--in", enh_in, "directory of PNGs; ids are file stems");
  em->excludes(ei);
  enh->add_option("--quality", enh_quality, "quality label selected from the manifest")
      ->check(CLI::IsMember({"Good", "Usable", "Reject"}));
  enh->add_option("--out", enh_out, "output directory")->required();
  add_common(enh, common);

  // eval-fr
  std::string fr_manifest, fr_enhanced;
  std::optional<std::string> fr_pairs, fr_csv, fr_quality;
  auto* efr = app.add_subcommand("eval-fr", "full-reference evaluation against clean counterparts");
  efr->add_option("--manifest", fr_manifest, "manifest resolving clean and degraded ids")->required();
  efr->add_option("--pairs", fr_pairs, "pairs CSV (default: pairs.csv beside the manifest)");
  efr->add_option("--enhanced", fr_enhanced, "directory of enhanced <degraded id>.png")->required();
  efr->add_option("--quality-model", fr_quality, "quality classifier; adds verdicts");
  efr->add_option("--csv", fr_csv, "write the per-image report CSV here");
  add_common(efr, common);

  // eval-nr
  std::string nr_enhanced, nr_quality;
  std::optional<std::string> nr_manifest, nr_csv;
  bool nr_dr = false;
  auto* enr = app.add_subcommand("eval-nr", "no-reference evaluation: converted ratio and DR-grade task");
  enr->add_option("--enhanced", nr_enhanced, "directory of enhanced images")->required();
  enr->add_option("--quality-model", nr_quality, "quality classifier from train-quality")->required();
  auto* nm = enr->add_option("--manifest", nr_manifest, "manifest supplying DR grades by id");
  enr->add_flag("--dr", nr_dr, "train and score a DR-grade classifier on the enhanced images")->needs(nm);
  enr->add_option("--csv", nr_csv, "write the per-image report CSV here");
  add_common(enr, common);

  // report
  std::string rep_csv;
  std::optional<std::string> rep_out;
  auto* rep = app.add_subcommand("report", "render a report CSV as a table, then as CSV");
  rep->add_option("--csv", rep_csv, "report CSV from eval-fr or eval-nr")->required();
  rep->add_option("--out-csv", rep_out, "also write the CSV here");
  add_common(rep, common);

  // train-quality
  std::string tq_manifest, tq_out;
  std::optional<int> tq_epochs;
  auto* tq = app.add_subcommand("train-quality", "train the image-quality classifier used by the evaluations");
  tq->add_option("--manifest", tq_manifest, "manifest with at least two quality classes")->required();
  tq->add_option("--out", tq_out, "classifier file to write")->required();
  tq->add_option("--epochs", tq_epochs, "override the epoch count")->check(CLI::NonNegativeNumber);
  add_common(tq, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }
  if (enh->parsed() && !enh_ckpt && !enh_untrained) {
    err << "error: enhance needs --checkpoint or --untrained\n\n" << enh->help();
    return 1;
  }
  if (enh->parsed() && !enh_manifest && !enh_in) {
    err << "error: enhance needs --manifest or --in\n\n" << enh->help();
    return 1;
  }

  try {
    ToolConfig cfg = load_tool_config(as_path(common.config), common.seed);

    if (synth->parsed()) {
      const auto manifest = build_corpus(n_per_grade, cfg.corpus, synth_out);
      out << "wrote " << 2 * n_per_grade * (kMaxDrGrade + 1) << " images\n" << "manifest: " << manifest.string()
          << "\npairs: " << (manifest.parent_path() / "pairs.csv").string() << '\n';
      return 0;
    }

    if (degr->parsed()) {
      auto one = [&](const fs::path& in, const fs::path& to) {
        DegradationSpec d = cfg.corpus.degradation;
        d.seed = derive_seed(cfg.seed, fnv1a64(in.filename().string()));
        save_image(degrade(load_image(in), d), to);
      };
      if (fs::is_directory(degrade_in)) {
        ensure_dir(degrade_out);
        const auto files = png_files(degrade_in);
        for (const auto& f : files) one(f, fs::path(degrade_out) / f.filename());
        out << "degraded " << files.size() << " images into " << degrade_out << '\n';
      } else {
        if (!fs::exists(degrade_in)) throw FileNotFound("no such file: " + degrade_in);
        one(degrade_in, degrade_out);
        out << "wrote " << degrade_out << '\n';
      }
      return 0;
    }

    if (trn->parsed()) {
      TrainConfig tc = cfg.train;
      if (train_profile) {
        // The profile flag replaces the base; seed and explicit --epochs still apply.
        const auto seed = tc.seed;
        tc = TrainConfig::named(*train_profile);
        tc.seed = seed;
      }
      if (train_epochs) tc.epochs = *train_epochs;
      const Records recs = load_manifest(train_manifest);
      const Records low = filter_quality(recs, QualityLabel::Reject), high = filter_quality(recs, QualityLabel::Good);
      if (low.empty() || high.empty()) throw InvalidArgument("train: manifest needs Reject and Good records");
      TrainOptions opts{train_out};
      if (train_resume) opts.resume = fs::path(*train_resume);
      const int spe = tc.steps_per_epoch > 0 ? tc.steps_per_epoch
                                             : static_cast<int>((low.size() + tc.batch_size - 1) / tc.batch_size);
      LossBreakdown acc;
      int n = 0;
      opts.on_step = [&](const LossRow& r) {
        acc.transport_cost += r.loss.transport_cost;
        acc.w1_estimate += r.loss.w1_estimate;
        acc.critic_total += r.loss.critic_total;
        if (++n == spe) {
          out << "epoch " << r.epoch + 1 << '/' << tc.epochs << std::fixed << std::setprecision(5)
              << "  transport " << acc.transport_cost / n << "  w1 " << acc.w1_estimate / n << "  critic "
              << acc.critic_total / n << std::defaultfloat << '\n'
              << std::flush;
          acc = {};
          n = 0;
        }
      };
      const auto res = train(tc, low, high, resizing_loader(tc.image_side), opts);
      out << "epochs completed: " << res.epochs_completed << '\n';
      if (res.last_checkpoint) out << "checkpoint: " << res.last_checkpoint->string() << '\n';
      return 0;
    }

    if (enh->parsed()) {
      const GeneratorModel model = [&] {
        if (enh_ckpt) return load_generator(*enh_ckpt);
        Rng r(derive_seed(cfg.seed, 1));
        return GeneratorModel{cfg.train.generator, cfg.train.image_side, Generator<float>(cfg.train.generator, r)};
      }();
      std::vector<std::string> ids;
      std::vector<ImageTensor> imgs;
      if (enh_manifest) {
        for (const auto& r : filter_quality(load_manifest(*enh_manifest), parse_quality(enh_quality))) {
          ids.push_back(r.id);
          imgs.push_back(center_crop_resize(load_image(r.path), model.image_side));
        }
        if (ids.empty()) throw InvalidArgument("enhance: manifest has no " + enh_quality + " records");
      } else {
        for (const auto& f : png_files(*enh_in)) {
          ids.push_back(f.stem().string());
          imgs.push_back(center_crop_resize(load_image(f), model.image_side));
        }
      }
      ensure_dir(enh_out);
      const auto outs = enhance(model, imgs);
      for (std::size_t i = 0; i < outs.size(); ++i) save_image(outs[i], fs::path(enh_out) / (ids[i] + ".png"));
      out << "enhanced " << outs.size() << " images into " << enh_out << '\n';
      return 0;
    }

    if (efr->parsed()) {
      const Records recs = load_manifest(fr_manifest);
      const fs::path pairs_path = fr_pairs ? fs::path(*fr_pairs) : fs::path(fr_manifest).parent_path() / "pairs.csv";
      FullReferenceOptions o;
      o.dr_grades = grades_of(recs);
      std::optional<ImageClassifier> q;
      if (fr_quality) {
        q = ImageClassifier::load(*fr_quality, kQualityKind);
        o.quality = &*q;
      }
      const auto lookup = manifest_lookup(recs);
      if (!fs::is_directory(fr_enhanced)) throw FileNotFound("no such directory: " + fr_enhanced);
      auto report = evaluate_full_reference(load_pairs(pairs_path), lookup, lookup, directory_lookup(fr_enhanced), o);
      report.notes.insert(report.notes.begin(), "enhanced: " + fr_enhanced);
      if (fr_csv) save_report_csv(*fr_csv, report);
      out << render_table(report);
      return 0;
    }

    if (enr->parsed()) {
      const auto q = ImageClassifier::load(nr_quality, kQualityKind);
      std::map<std::string, int> grades;
      if (nr_manifest) grades = grades_of(load_manifest(*nr_manifest));
      std::vector<NoReferenceItem> items;
      for (const auto& f : png_files(nr_enhanced)) {
        NoReferenceItem it{f.stem().string(), load_image(f), std::nullopt};
        if (const auto g = grades.find(it.id); g != grades.end()) it.dr_grade = g->second;
        items.push_back(std::move(it));
      }
      std::optional<DrEvalConfig> dr;
      if (nr_dr) dr = DrEvalConfig{cfg.dr};
      auto report = evaluate_no_reference(items, q, dr);
      report.notes.insert(report.notes.begin(), "enhanced: " + nr_enhanced);
      if (nr_csv) save_report_csv(*nr_csv, report);
      out << render_table(report);
      return 0;
    }

    if (rep->parsed()) {
      const auto report = load_report_csv(rep_csv);
      if (rep_out) save_report_csv(*rep_out, report);
      out << render_table(report) << '\n';
      write_report_csv(out, report);
      return 0;
    }

    if (tq->parsed()) {
      ClassifierTrainConfig c = cfg.quality;
      if (tq_epochs) c.epochs = *tq_epochs;
      const auto res = train_quality_classifier(load_manifest(tq_manifest), resizing_loader(c.image_side), c);
      res.classifier.save(tq_out, kQualityKind);
      out << kSplitNote << "\ntrain " << res.train_count << "  held-out " << res.heldout_count << std::fixed
          << std::setprecision(4) << "\nheld-out kappa " << res.heldout_kappa << "  AUROC (Good vs rest) "
          << res.heldout_auroc << std::defaultfloat << "\nwrote " << tq_out << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  err << app.help();
  return 1;
}

}  // namespace ote::cli
