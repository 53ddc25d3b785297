// boxfuse: merge, fuse and score 2D detection files.

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "boxfuse/io.hpp"

using namespace boxfuse;

namespace {

// exit codes: 0 ok, 1 usage, 2 parse, 3 config, 4 domain/evaluation
constexpr int kParseExit = 2;
constexpr int kConfigExit = 3;
constexpr int kDomainExit = 4;

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(csv);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Vocabulary make_vocabulary(const std::string& csv) {
  if (csv.empty()) return Vocabulary::defaults();
  Vocabulary vocab;
  vocab.names = split_csv(csv);
  if (vocab.names.empty()) throw ConfigError("empty vocabulary");
  return vocab;
}

Difficulty parse_level(const std::string& level) {
  if (level == "l1" || level == "L1") return Difficulty::kL1;
  if (level == "l2" || level == "L2") return Difficulty::kL2;
  throw ConfigError("level must be l1 or l2, got '" + level + "'");
}

// Waymo thresholds for the default class names, 0.5 for anything else,
// then per-class overrides from "name=value,...".
EvalConfig make_eval_config(const Vocabulary& vocab, const std::string& level,
                            const std::string& class_iou_csv, double score_min,
                            int max_dets) {
  const EvalConfig waymo = default_waymo_config();
  const Vocabulary def = Vocabulary::defaults();

  EvalConfig cfg;
  cfg.level = parse_level(level);
  cfg.score_min = score_min;
  if (max_dets > 0) cfg.max_dets_per_image = max_dets;
  for (std::size_t i = 0; i < vocab.names.size(); ++i) {
    const ClassId cls = static_cast<ClassId>(i);
    double thresh = 0.5;
    if (std::optional<ClassId> d = def.id_of(vocab.names[i])) {
      thresh = waymo.per_class_iou.at(*d);
    }
    cfg.per_class_iou[cls] = thresh;
  }
  for (const std::string& entry : split_csv(class_iou_csv)) {
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("bad --class-iou entry '" + entry + "', expected name=value");
    }
    const std::string name = entry.substr(0, eq);
    std::optional<ClassId> cls = vocab.id_of(name);
    if (!cls) throw ConfigError("--class-iou: unknown class '" + name + "'");
    const double t = std::stod(entry.substr(eq + 1));
    if (!(t > 0.0 && t < 1.0)) {
      throw ConfigError("--class-iou: threshold for " + name + " must lie in (0,1)");
    }
    cfg.per_class_iou[*cls] = t;
  }
  return cfg;
}

OpParams make_params(OpKind kind, double iou_thresh, double soft_sigma,
                     const std::string& soft_method, double score_floor,
                     bool class_agnostic, int wbf_n) {
  OpParams p;
  p.iou_thresh = iou_thresh > 0.0 ? iou_thresh
                 : kind == OpKind::kWbf ? 0.55
                                        : 0.5;
  p.soft_sigma = soft_sigma;
  if (soft_method == "linear") {
    p.soft_method = SoftMethod::kLinear;
  } else if (soft_method == "gaussian") {
    p.soft_method = SoftMethod::kGaussian;
  } else {
    throw ConfigError("soft method must be linear or gaussian, got '" + soft_method + "'");
  }
  p.score_floor = score_floor;
  p.class_aware = !class_agnostic;
  if (wbf_n > 0) p.wbf_model_count = wbf_n;
  validate(p);
  return p;
}

std::vector<DetectionGroup> load_groups(const std::vector<std::string>& paths,
                                        const Vocabulary& vocab) {
  if (paths.empty()) throw ConfigError("at least one --dets file is required");
  std::vector<DetectionGroup> groups;
  groups.reserve(paths.size());
  for (const std::string& p : paths) groups.push_back(load_detections(p, vocab));
  return groups;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot write");
  out << text;
}

struct StrategySpec {
  std::optional<Strategy> uniform;                 // e.g. --strategy gae
  std::map<std::string, Strategy> by_class_name;   // e.g. vehicle=adj_nms
  bool waymo_routing = false;                      // --strategy waymo
};

StrategySpec parse_strategy(const std::string& spec) {
  StrategySpec out;
  if (spec == "waymo") {
    out.waymo_routing = true;
    return out;
  }
  if (spec.find('=') == std::string::npos) {
    std::optional<Strategy> s = strategy_from_name(spec);
    if (!s) throw ConfigError("unknown strategy '" + spec + "'");
    out.uniform = s;
    return out;
  }
  for (const std::string& entry : split_csv(spec)) {
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("bad --strategy entry '" + entry + "', expected class=strategy");
    }
    const std::string name = entry.substr(0, eq);
    std::optional<Strategy> s = strategy_from_name(entry.substr(eq + 1));
    if (!s) throw ConfigError("unknown strategy '" + entry.substr(eq + 1) + "'");
    out.by_class_name[name] = *s;
  }
  return out;
}

std::map<ClassId, ClassStrategy> resolve_strategies(
    const StrategySpec& spec, const Vocabulary& vocab,
    const std::vector<DetectionGroup>& groups, const OpParams& params) {
  std::map<ClassId, ClassStrategy> strategies;
  if (spec.waymo_routing) {
    strategies = default_ensemble_routing();
    // carry the routing over to a custom vocabulary by class name
    const Vocabulary def = Vocabulary::defaults();
    std::map<ClassId, ClassStrategy> mapped;
    for (const auto& [cls, strat] : strategies) {
      if (std::optional<ClassId> id = vocab.id_of(def.name_of(cls))) {
        mapped[*id] = strat;
      }
    }
    return mapped;
  }

  std::set<ClassId> classes;
  for (const DetectionGroup& g : groups) {
    for (const auto& [image_id, dets] : g.per_image) {
      for (const BBox& b : dets.boxes) classes.insert(b.class_id);
    }
  }
  if (spec.uniform) {
    for (ClassId cls : classes) strategies[cls] = {*spec.uniform, params};
    return strategies;
  }
  for (const auto& [name, strat] : spec.by_class_name) {
    std::optional<ClassId> cls = vocab.id_of(name);
    if (!cls) throw ConfigError("--strategy: unknown class '" + name + "'");
    OpParams p = params;
    if (strat == Strategy::kWbf && p.iou_thresh == 0.5) p.iou_thresh = 0.55;
    strategies[*cls] = {strat, p};
  }
  return strategies;
}

std::vector<FusionOp> make_op_set(const std::string& ops_csv, double iou_thresh,
                                  double soft_sigma, const std::string& soft_method,
                                  double score_floor, bool class_agnostic) {
  if (ops_csv.empty()) return default_op_set();
  std::vector<FusionOp> ops;
  for (const std::string& name : split_csv(ops_csv)) {
    std::optional<OpKind> kind = op_from_name(name);
    if (!kind) throw ConfigError("--ops: unknown operator '" + name + "'");
    FusionOp op;
    op.kind = *kind;
    op.params = make_params(*kind, iou_thresh, soft_sigma, soft_method, score_floor,
                            class_agnostic, -1);
    ops.push_back(op);
  }
  return ops;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"detection-ensemble toolkit: fuse, evaluate and greedily merge "
               "2D detection files"};
  app.require_subcommand(1);

  // shared flags
  std::vector<std::string> det_paths;
  std::string gt_path;
  std::string vocab_csv;
  std::string level = "l2";
  std::string class_iou_csv;
  double score_min = 0.0;
  int max_dets = -1;

  // operator params
  double iou_thresh = -1.0;  // negative = per-operator default
  double soft_sigma = 0.5;
  std::string soft_method = "gaussian";
  double score_floor = 0.001;
  bool class_agnostic = false;
  int wbf_n = -1;
  std::string weights_csv;

  // outputs
  std::string out_path;
  std::string log_path;
  std::string report_path;

  std::string op_label;
  std::string ops_csv;
  std::string strategy_spec = "gae";
  int jobs = 1;

  auto add_common = [&](CLI::App* cmd, bool needs_gt) {
    cmd->add_option("--dets", det_paths, "detection file (repeatable)")->required();
    auto* gt = cmd->add_option("--gt", gt_path, "ground-truth file");
    if (needs_gt) gt->required();
    cmd->add_option("--seed-vocabulary", vocab_csv,
                    "comma-separated class names (default vehicle,pedestrian,cyclist)");
    cmd->add_option("--level", level, "evaluation level: l1 or l2 (default l2)");
    cmd->add_option("--class-iou", class_iou_csv,
                    "per-class IoU thresholds, e.g. vehicle=0.7,cyclist=0.5");
    cmd->add_option("--score-min", score_min, "ignore predictions below this score");
    cmd->add_option("--max-dets", max_dets, "cap detections per image before scoring");
  };
  auto add_params = [&](CLI::App* cmd) {
    cmd->add_option("--iou-thresh", iou_thresh,
                    "operator IoU threshold (default 0.5, wbf 0.55)");
    cmd->add_option("--soft-sigma", soft_sigma, "gaussian soft-NMS width");
    cmd->add_option("--soft-method", soft_method, "soft-NMS decay: linear or gaussian");
    cmd->add_option("--score-floor", score_floor, "drop decayed boxes below this score");
    cmd->add_flag("--class-agnostic", class_agnostic,
                  "suppress/merge across classes (default class-aware)");
  };

  CLI::App* cmd_eval = app.add_subcommand("eval", "score one detection file against ground truth");
  add_common(cmd_eval, true);
  cmd_eval->add_option("--report", report_path, "write the metrics report (json)");

  CLI::App* cmd_fuse = app.add_subcommand("fuse", "apply one fusion operator to pooled groups");
  add_common(cmd_fuse, false);
  add_params(cmd_fuse);
  cmd_fuse->add_option("--op", op_label, "nms | soft_nms | adj_nms | nmw_naive | wbf")->required();
  cmd_fuse->add_option("--wbf-n", wbf_n, "WBF model count N (default: number of groups)");
  cmd_fuse->add_option("--weights", weights_csv, "per-group WBF weights, e.g. 1,1,2");
  cmd_fuse->add_option("--out", out_path, "merged detection file")->required();

  CLI::App* cmd_gae = app.add_subcommand(
      "gae", "greedy auto ensemble: merge groups by validation mAP");
  add_common(cmd_gae, true);
  add_params(cmd_gae);
  cmd_gae->add_option("--strategy", strategy_spec,
                      "per-class strategy map 'vehicle=adj_nms,...', a single "
                      "strategy for all classes, or 'waymo' (default gae)");
  cmd_gae->add_option("--ops", ops_csv,
                      "operator set searched by gae (default nms,adj_nms,nmw_naive,o1,o2)");
  cmd_gae->add_option("--jobs", jobs, "worker threads for pair evaluation");
  cmd_gae->add_option("--out", out_path, "merged detection file")->required();
  cmd_gae->add_option("--log", log_path, "write the merge-tree trace");
  cmd_gae->add_option("--report", report_path, "write the metrics report (json)");

  CLI11_PARSE(app, argc, argv);

  try {
    const Vocabulary vocab = make_vocabulary(vocab_csv);

    if (cmd_eval->parsed()) {
      const EvalConfig cfg =
          make_eval_config(vocab, level, class_iou_csv, score_min, max_dets);
      std::vector<DetectionGroup> groups = load_groups(det_paths, vocab);
      if (groups.size() != 1) {
        throw ConfigError("eval expects exactly one --dets file");
      }
      const GroundTruth gt = load_ground_truth(gt_path, vocab);
      const EvalReport report = evaluate(groups.front(), gt, cfg);
      std::cout << format_report_table(report, vocab, cfg);
      if (!report_path.empty()) {
        write_text(report_path, format_report_json(report, vocab, cfg));
      }
      return 0;
    }

    if (cmd_fuse->parsed()) {
      std::optional<OpKind> kind = op_from_name(op_label);
      if (!kind || *kind == OpKind::kIdentityLeft || *kind == OpKind::kIdentityRight) {
        throw ConfigError("unknown operator '" + op_label + "'");
      }
      const OpParams params = make_params(*kind, iou_thresh, soft_sigma, soft_method,
                                          score_floor, class_agnostic, wbf_n);
      std::vector<DetectionGroup> groups = load_groups(det_paths, vocab);

      DetectionGroup merged;
      if (*kind == OpKind::kWbf) {
        std::vector<double> weights;
        for (const std::string& w : split_csv(weights_csv)) weights.push_back(std::stod(w));
        merged = wbf_groups(groups, weights, params, "fused");
      } else {
        if (!weights_csv.empty()) {
          throw ConfigError("--weights only applies to --op wbf");
        }
        merged = apply_to_group(*kind, pool_groups(groups, "fused"), params);
      }
      save_detections(merged, out_path, vocab);
      std::cout << "fused " << groups.size() << " group(s) with " << op_name(*kind)
                << " -> " << out_path << " (" << merged.total_boxes() << " boxes)\n";
      return 0;
    }

    // gae
    const EvalConfig cfg =
        make_eval_config(vocab, level, class_iou_csv, score_min, max_dets);
    const OpParams params = make_params(OpKind::kNms, iou_thresh, soft_sigma,
                                        soft_method, score_floor, class_agnostic, -1);
    std::vector<DetectionGroup> groups = load_groups(det_paths, vocab);
    const GroundTruth gt = load_ground_truth(gt_path, vocab);

    GaeOptions options;
    options.ops = make_op_set(ops_csv, iou_thresh, soft_sigma, soft_method,
                              score_floor, class_agnostic);
    options.jobs = jobs;

    const StrategySpec spec = parse_strategy(strategy_spec);
    const std::map<ClassId, ClassStrategy> strategies =
        resolve_strategies(spec, vocab, groups, params);

    std::map<ClassId, MergeTree> traces;
    DetectionGroup merged =
        per_class_ensemble(strategies, groups, gt, cfg, options, &traces);

    save_detections(merged, out_path, vocab);
    const EvalReport report = evaluate(merged, gt, cfg);
    std::cout << format_report_table(report, vocab, cfg);
    std::cout << "merged " << groups.size() << " group(s) -> " << out_path << " ("
              << merged.total_boxes() << " boxes)\n";

    if (!log_path.empty()) {
      std::string trace;
      for (const auto& [cls, tree] : traces) {
        trace += "== class " + vocab.name_of(cls) + " ==\n";
        trace += format_merge_trace(tree);
      }
      if (traces.empty()) trace = "# merge trace\n# no class used the gae strategy\n";
      write_text(log_path, trace);
    }
    if (!report_path.empty()) {
      write_text(report_path, format_report_json(report, vocab, cfg));
    }
    return 0;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kParseExit;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDomainExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDomainExit;
  }
}
