#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "vbfi/clustering.hpp"
#include "vbfi/concept_catalog.hpp"
#include "vbfi/data_model.hpp"
#include "vbfi/eval.hpp"
#include "vbfi/io.hpp"
#include "vbfi/questionnaire.hpp"
#include "vbfi/service.hpp"
#include "vbfi/vgbdt.hpp"

namespace vbfi::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

inline std::filesystem::path model_path(const std::filesystem::path& dir, Trait t) {
  return dir / ("model_" + std::string(to_string(t)) + ".json");
}

inline void setup_logging(const std::string& level) {
  static bool ready = false;
  if (!ready) {
    auto logger = spdlog::stderr_color_mt("vbfi");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
    ready = true;
  }
  std::string lvl = level;
  if (const char* env = std::getenv("VBFI_LOG"); env && *env) lvl = env;
  spdlog::set_level(spdlog::level::from_str(lvl));
}

// Flags shared by the subcommands that build a view matrix.
struct DataOptions {
  std::string data_dir;
  std::string concepts_file;
  std::size_t min_common_users = 104;
  std::string aggregation = "mean";

  void add(CLI::App* cmd) {
    cmd->add_option("--data", data_dir, "Directory with images.jsonl, favorites.csv, traits.csv")->required();
    cmd->add_option("--concepts", concepts_file, "Concept list (one per line); default: greedy co-favored selection");
    cmd->add_option("--min-common-users", min_common_users, "Users every selected concept must share")
        ->capture_default_str();
    cmd->add_option("--view-agg", aggregation, "Per-view aggregation of several favorites: mean|first")
        ->capture_default_str()
        ->check(CLI::IsMember({"mean", "first"}));
  }

  struct Loaded {
    Dataset dataset;
    ConceptIndex index;
    ViewMatrix views;
  };

  Loaded load() const {
    Loaded out;
    out.dataset = load_dataset(DatasetPaths::in_dir(data_dir));
    out.index = build_index(out.dataset);
    std::vector<std::string> concepts;
    std::set<std::string> users;
    if (!concepts_file.empty()) {
      concepts = read_concept_list(concepts_file);
      for (const auto& [id, _] : out.dataset.users) users.insert(id);
      for (const auto& c : concepts) {
        auto it = out.index.user_sets.find(c);
        if (it == out.index.user_sets.end()) throw DataError("concept " + c + " is not favored by any user");
        std::set<std::string> next;
        std::set_intersection(users.begin(), users.end(), it->second.begin(), it->second.end(),
                              std::inserter(next, next.begin()));
        users = std::move(next);
      }
      if (users.empty()) throw DataError("no user favors every listed concept");
    } else {
      auto cf = co_favored_concepts(out.index, min_common_users);
      concepts = std::move(cf.concepts);
      users = std::move(cf.common_users);
    }
    spdlog::info("{} views over {} users", concepts.size(), users.size());
    out.views = build_views(out.dataset, concepts, users,
                            aggregation == "first" ? ViewAggregation::kFirst : ViewAggregation::kMean);
    return out;
  }
};

struct BoostingOptions {
  BoostingConfig cfg;

  void add(CLI::App* cmd) {
    cmd->add_option("--M", cfg.rounds, "Boosting rounds (questions per trait)")->capture_default_str();
    cmd->add_option("--J", cfg.leaves, "Leaves per tree (options per question)")->capture_default_str();
    cmd->add_option("--shrinkage", cfg.shrinkage, "Learning rate in (0, 1]")->capture_default_str();
    cmd->add_option("--min-leaf", cfg.min_leaf, "Minimum training rows per leaf")->capture_default_str();
    cmd->add_flag("--distinct-views", cfg.distinct_views, "Never reuse a view across rounds");
  }
};

struct TraitOptions {
  std::string trait;
  bool all = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--trait", trait, "Single trait (O, C, E, A, N or long name)");
    cmd->add_flag("--all-traits", all, "All five traits (the default when --trait is absent)");
  }

  std::vector<Trait> selected() const {
    if (trait.empty()) return {kAllTraits.begin(), kAllTraits.end()};
    auto t = parse_trait(trait);
    if (!t) throw std::invalid_argument("unknown trait " + trait);
    return {*t};
  }
};

inline std::vector<double> label_vector(const Dataset& ds, const ViewMatrix& views, Trait t) {
  std::vector<double> y;
  for (const auto& u : views.users) y.push_back(ds.users.at(u).trait(t));
  return y;
}

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

/// Entry point shared by the binary and the tests. Exit codes: 0 success,
/// 1 usage error, 2 data error.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Image-based Big-Five questionnaire toolkit", "vbfi"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off (VBFI_LOG overrides)")
      ->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with planted signal");
  SynthSpec spec;
  std::size_t informative = spec.informative_views.size();
  std::string synth_out;
  synth->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  synth->add_option("--users", spec.num_users, "Number of users")->capture_default_str();
  synth->add_option("--views", spec.num_views, "Co-favored concepts K")->capture_default_str();
  synth->add_option("--dim", spec.feature_dim, "Image feature dimension d")->capture_default_str();
  synth->add_option("--informative", informative, "Informative views, spread evenly over K")->capture_default_str();
  synth->add_option("--noise", spec.noise_std, "Label noise standard deviation")->capture_default_str();
  synth->add_option("--extra-concepts", spec.extra_concepts, "Concepts outside the co-favored set")
      ->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // expand-concepts
  auto* expand = app.add_subcommand("expand-concepts", "Add hypernym concepts to every image");
  std::string expand_data, expand_hierarchy, expand_out;
  int expand_levels = 1;
  expand->add_option("--data", expand_data, "Input dataset directory")->required();
  expand->add_option("--hierarchy", expand_hierarchy, "Hierarchy JSON {\"edges\":[{child,parent}]}")->required();
  expand->add_option("--levels", expand_levels, "Parent steps to add")->capture_default_str();
  expand->add_option("--out", expand_out, "Output dataset directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Fit one model per trait");
  DataOptions train_data;
  BoostingOptions train_boost;
  TraitOptions train_traits;
  std::string train_out;
  train_data.add(train_cmd);
  train_boost.add(train_cmd);
  train_traits.add(train_cmd);
  train_cmd->add_option("--out", train_out, "Model directory (model_<T>.json)")->required();

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Repeated k-fold cross-validation");
  DataOptions eval_data;
  BoostingOptions eval_boost;
  TraitOptions eval_traits;
  CvPlan eval_plan;
  std::string eval_out, eval_summary;
  eval_data.add(eval_cmd);
  eval_boost.add(eval_cmd);
  eval_traits.add(eval_cmd);
  eval_cmd->add_option("--folds", eval_plan.folds, "Folds per repeat")->capture_default_str();
  eval_cmd->add_option("--repeats", eval_plan.repeats, "Repeats")->capture_default_str();
  eval_cmd->add_option("--seed", eval_plan.seed, "Fold seed")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Per-fold CSV (default stdout)");
  eval_cmd->add_option("--summary", eval_summary,
                       "Summary CSV comparing vGBDT, the best single-view CART and the mean predictor");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Cross-validated sweep over M or J");
  DataOptions sweep_data;
  BoostingOptions sweep_boost;
  TraitOptions sweep_traits;
  CvPlan sweep_plan;
  std::string sweep_param = "M", sweep_out, sweep_plot;
  std::vector<std::size_t> sweep_values{1, 3, 5, 7, 10};
  sweep_data.add(sweep_cmd);
  sweep_boost.add(sweep_cmd);
  sweep_traits.add(sweep_cmd);
  sweep_cmd->add_option("--param", sweep_param, "Parameter to sweep: M|J")
      ->capture_default_str()
      ->check(CLI::IsMember({"M", "J"}));
  sweep_cmd->add_option("--values", sweep_values, "Values to try")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--folds", sweep_plan.folds, "Folds per repeat")->capture_default_str();
  sweep_cmd->add_option("--repeats", sweep_plan.repeats, "Repeats")->capture_default_str();
  sweep_cmd->add_option("--seed", sweep_plan.seed, "Fold seed")->capture_default_str();
  sweep_cmd->add_option("--out", sweep_out, "CSV output (default stdout)");
  sweep_cmd->add_option("--plot", sweep_plot, "Also write an SVG chart here");

  // design
  auto* design_cmd = app.add_subcommand("design", "Compile trained models into a questionnaire");
  std::string design_models, design_data, design_out, design_version, design_pref = "median";
  int cluster_choice = 1;
  ApConfig ap_cfg;
  std::uint64_t design_seed = 42;
  design_cmd->add_option("--models", design_models, "Model directory")->required();
  design_cmd->add_option("--data", design_data, "Dataset directory the models were trained on")->required();
  design_cmd->add_option("--cluster-choice", cluster_choice, "Cluster rank to draw options from (1 = largest)")
      ->capture_default_str();
  design_cmd->add_option("--version-id", design_version, "Version id (default vbfi-<cluster-choice>)");
  design_cmd->add_option("--damping", ap_cfg.damping, "Affinity propagation damping")->capture_default_str();
  design_cmd->add_option("--max-iter", ap_cfg.max_iter, "Affinity propagation iteration cap")->capture_default_str();
  design_cmd->add_option("--convergence-iter", ap_cfg.convergence_iter, "Stable sweeps to declare convergence")
      ->capture_default_str();
  design_cmd->add_option("--preference", design_pref, "median|min|<number>")->capture_default_str();
  design_cmd->add_option("--seed", design_seed, "Seed for display order and AP jitter")->capture_default_str();
  design_cmd->add_option("--out", design_out, "questionnaire.json path")->required();

  // score
  auto* score_cmd = app.add_subcommand("score", "Score response sheets");
  std::vector<std::string> score_q;
  std::string score_responses, score_out;
  score_cmd->add_option("--questionnaire", score_q, "Questionnaire file(s)")->required();
  score_cmd->add_option("--responses", score_responses, "responses.jsonl")->required();
  score_cmd->add_option("--out", score_out, "Scores CSV (default stdout)");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  std::vector<std::string> serve_q;
  std::string serve_host = "127.0.0.1", serve_images, serve_journal = "responses.jsonl", serve_origin, serve_static;
  int serve_port = 8080;
  serve_cmd->add_option("--questionnaire", serve_q, "Questionnaire file(s); the first is the default")->required();
  serve_cmd->add_option("--port", serve_port, "Port")->capture_default_str();
  serve_cmd->add_option("--host", serve_host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--images-dir", serve_images, "Directory of option images");
  serve_cmd->add_option("--journal", serve_journal, "Append-only response journal")->capture_default_str();
  serve_cmd->add_option("--allow-origin", serve_origin, "CORS origin for the web UI");
  serve_cmd->add_option("--static-dir", serve_static, "Static web assets served at /");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  setup_logging(log_level);

  try {
    if (*synth) {
      spec.informative_views = SynthSpec::spread_views(informative, spec.num_views);
      const SynthData sd = generate_synthetic(spec);
      const std::filesystem::path dir = synth_out;
      save_dataset(sd.dataset, DatasetPaths::in_dir(dir));
      write_file_atomic(dir / "hierarchy.json", sd.hierarchy.to_json().dump(2) + "\n");
      std::string list;
      for (const auto& c : sd.concepts) list += c + "\n";
      write_file_atomic(dir / "concepts.txt", list);
      spdlog::info("wrote {} users, {} images to {}", sd.dataset.users.size(), sd.dataset.images.size(), dir.string());
    } else if (*expand) {
      const Dataset ds = load_dataset(DatasetPaths::in_dir(expand_data));
      const auto h = ConceptHierarchy::load(expand_hierarchy);
      save_dataset(expand_concepts(ds, h, expand_levels), DatasetPaths::in_dir(expand_out));
    } else if (*train_cmd) {
      const auto loaded = train_data.load();
      for (Trait t : train_traits.selected()) {
        const auto model = train(loaded.views, trait_labels(loaded.dataset, loaded.views, t), train_boost.cfg, t);
        save_model(model, model_path(train_out, t));
        std::string picked;
        for (const auto& r : model.rounds) picked += (picked.empty() ? "" : ", ") + r.concept_name;
        spdlog::info("trait {}: F0={} rounds: {}", to_string(t), format_double(model.f0), picked);
      }
    } else if (*eval_cmd) {
      const auto loaded = eval_data.load();
      const auto& vm = loaded.views;
      std::string csv = "trait,repeat,fold,rmse\n";
      std::string summary = "trait,learner,mean_rmse,std_rmse,p_value\n";
      for (Trait t : eval_traits.selected()) {
        const auto y = label_vector(loaded.dataset, vm, t);
        const CvReport rep = cross_validate(vm.rows.view(), y, vm.feature_dim, eval_boost.cfg, eval_plan, t);
        for (std::size_t i = 0; i < rep.fold_rmse.size(); ++i) {
          csv += std::string(to_string(t)) + "," + std::to_string(i / rep.folds) + "," + std::to_string(i % rep.folds) +
                 "," + format_double(rep.fold_rmse[i]) + "\n";
        }
        spdlog::info("trait {}: vGBDT mean RMSE {} (sd {})", to_string(t), format_double(rep.mean_rmse),
                     format_double(rep.std_rmse));
        if (!eval_summary.empty()) {
          CvReport best;
          for (std::size_t k = 0; k < vm.num_views(); ++k) {
            auto r = cross_validate(vm.rows.view(), y,
                                    single_view_cart_learner(k, vm.feature_dim, eval_boost.cfg.leaves, eval_boost.cfg.min_leaf),
                                    eval_plan, t, "cart:" + vm.concepts[k]);
            if (best.fold_rmse.empty() || r.mean_rmse < best.mean_rmse) best = std::move(r);
          }
          const CvReport mean = cross_validate(vm.rows.view(), y, mean_learner(), eval_plan, t, "mean");
          auto row = [&](const CvReport& r, const std::optional<double>& p) {
            summary += std::string(to_string(t)) + "," + r.learner + "," + format_double(r.mean_rmse) + "," +
                       format_double(r.std_rmse) + "," + (p ? format_double(*p) : "") + "\n";
          };
          row(rep, paired_significance(rep.fold_rmse, best.fold_rmse));
          row(best, paired_significance(best.fold_rmse, mean.fold_rmse));
          row(mean, std::nullopt);
        }
      }
      write_output(eval_out, csv, out);
      if (!eval_summary.empty()) write_file_atomic(eval_summary, summary);
    } else if (*sweep_cmd) {
      const auto loaded = sweep_data.load();
      const auto& vm = loaded.views;
      std::vector<SweepRow> rows;
      const SweepParam param = sweep_param == "M" ? SweepParam::kRounds : SweepParam::kLeaves;
      for (Trait t : sweep_traits.selected()) {
        auto r = sweep(vm.rows.view(), label_vector(loaded.dataset, vm, t), vm.feature_dim, sweep_boost.cfg, param,
                       sweep_values, sweep_plan, t);
        rows.insert(rows.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
      }
      write_output(sweep_out, sweep_csv(rows), out);
      if (!sweep_plot.empty()) write_file_atomic(sweep_plot, sweep_svg(rows));
    } else if (*design_cmd) {
      ap_cfg.preference = Preference::parse(design_pref);
      ap_cfg.noise_seed = design_seed;
      std::map<Trait, VgbdtModel> models;
      for (Trait t : kAllTraits) {
        const auto p = model_path(design_models, t);
        if (std::filesystem::exists(p)) models.emplace(t, load_model(p));
      }
      if (models.empty()) throw DataError("no model_<T>.json files in " + design_models);
      const Dataset ds = load_dataset(DatasetPaths::in_dir(design_data));
      const auto q = design_questionnaire(models, ds, build_index(ds), cluster_choice, ap_cfg, design_seed,
                                          design_version);
      for (const auto& w : q.warnings) spdlog::warn("{}", w);
      save_questionnaire(q, design_out);
      spdlog::info("questionnaire {}: {} questions", q.version_id, q.question_count());
    } else if (*score_cmd) {
      std::map<std::string, Questionnaire> qs;
      for (const auto& p : score_q) {
        auto q = load_questionnaire(p);
        const std::string id = q.version_id;
        qs.emplace(id, std::move(q));
      }
      std::string csv = "subject_id,version_id,O,C,E,A,N\n";
      for (const auto& sheet : load_responses(score_responses)) {
        auto it = qs.find(sheet.version_id);
        if (it == qs.end() && qs.size() == 1 && sheet.version_id.empty()) it = qs.begin();
        if (it == qs.end()) {
          spdlog::warn("skipping {}: no questionnaire with version {}", sheet.subject_id, sheet.version_id);
          continue;
        }
        std::map<Trait, double> scores;
        try {
          scores = score_response(it->second, sheet);
        } catch (const ResponseError& e) {
          throw DataError(score_responses + ": subject " + sheet.subject_id + ": " + e.what());
        }
        csv += sheet.subject_id + "," + it->first;
        for (Trait t : kAllTraits) {
          auto s = scores.find(t);
          csv += "," + (s == scores.end() ? std::string() : format_double(s->second));
        }
        csv += "\n";
      }
      write_output(score_out, csv, out);
    } else if (*serve_cmd) {
      ServiceConfig cfg;
      for (const auto& p : serve_q) cfg.questionnaires.push_back(load_questionnaire(p));
      cfg.images_dir = serve_images;
      cfg.journal = serve_journal;
      cfg.allow_origin = serve_origin;
      cfg.static_dir = serve_static;
      QuestionnaireService service(std::move(cfg));
      httplib::Server server;
      service.mount(server);
      server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
        spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
      });
      spdlog::info("serving {} on {}:{}", service.default_version(), serve_host, serve_port);
      if (!server.listen(serve_host, serve_port)) throw DataError("cannot listen on " + serve_host + ":" + std::to_string(serve_port));
    }
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

}  // namespace vbfi::cli
