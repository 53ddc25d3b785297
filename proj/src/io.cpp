#include "boxfuse/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace boxfuse {

namespace {

constexpr const char* kDetectionsHeader = "# detections v1";
constexpr const char* kGroundTruthHeader = "# groundtruth v1";

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_double(std::string_view token, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(v)) {
    throw ParseError(where + ": bad number '" + std::string(token) + "'");
  }
  return v;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

std::string file_stem(const std::filesystem::path& path) {
  return path.stem().string();
}

double clamp_score(double score, const std::string& where) {
  if (score < 0.0 || score > 1.0) {
    warn(where + ": score " + fmt_double(score) + " clamped to [0,1]");
    return std::clamp(score, 0.0, 1.0);
  }
  return score;
}

ClassId class_of(const Vocabulary& vocab, const std::string& label,
                 const std::string& where) {
  std::optional<ClassId> id = vocab.id_of(label);
  if (!id) throw ParseError(where + ": unknown class label '" + label + "'");
  return *id;
}

void check_geometry(const BBox& box, const std::string& where) {
  if (!(box.x1 < box.x2) || !(box.y1 < box.y2)) {
    throw ParseError(where + ": degenerate box [" + fmt_double(box.x1) + "," +
                     fmt_double(box.y1) + "," + fmt_double(box.x2) + "," +
                     fmt_double(box.y2) + "]");
  }
}

bool looks_like_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  char c = 0;
  while (in.get(c)) {
    if (!std::isspace(static_cast<unsigned char>(c))) return c == '[' || c == '{';
  }
  return false;
}

DetectionGroup load_detections_json(const std::filesystem::path& path,
                                    const Vocabulary& vocab) {
  std::ifstream in(path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) {
    throw ParseError(path.string() + ": expected a top-level results array");
  }

  DetectionGroup group;
  group.group_id = file_stem(path);
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string where = path.string() + ": record " + std::to_string(i);
    const nlohmann::json& rec = doc[i];
    try {
      std::string image_id;
      if (rec.at("image_id").is_string()) {
        image_id = rec.at("image_id").get<std::string>();
      } else {
        image_id = std::to_string(rec.at("image_id").get<long long>());
      }

      BBox box;
      if (rec.at("category_id").is_string()) {
        box.class_id = class_of(vocab, rec.at("category_id").get<std::string>(), where);
      } else {
        // interchange category ids are 1-based
        const int cat = rec.at("category_id").get<int>();
        if (cat < 1 || static_cast<std::size_t>(cat) > vocab.names.size()) {
          throw ParseError(where + ": category_id " + std::to_string(cat) +
                           " outside vocabulary");
        }
        box.class_id = cat - 1;
      }

      const auto& b = rec.at("bbox");
      if (!b.is_array() || b.size() != 4) {
        throw ParseError(where + ": bbox must be [x,y,w,h]");
      }
      const double x = b[0].get<double>();
      const double y = b[1].get<double>();
      const double w = b[2].get<double>();
      const double h = b[3].get<double>();
      box.x1 = x;
      box.y1 = y;
      box.x2 = x + w;
      box.y2 = y + h;
      box.score = clamp_score(rec.at("score").get<double>(), where);
      check_geometry(box, where);
      group.add(image_id, box);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return group;
}

}  // namespace

Vocabulary Vocabulary::defaults() {
  return Vocabulary{{"vehicle", "pedestrian", "cyclist"}};
}

std::optional<ClassId> Vocabulary::id_of(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<ClassId>(i);
  }
  return std::nullopt;
}

const std::string& Vocabulary::name_of(ClassId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names.size()) {
    throw ConfigError("class id " + std::to_string(id) + " outside vocabulary");
  }
  return names[static_cast<std::size_t>(id)];
}

DetectionGroup load_detections(const std::filesystem::path& path,
                               const Vocabulary& vocab) {
  if (!std::filesystem::exists(path)) {
    throw ParseError(path.string() + ": no such file");
  }
  if (looks_like_json(path)) return load_detections_json(path, vocab);

  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");

  DetectionGroup group;
  group.group_id = file_stem(path);

  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (!saw_header) {
      if (line != kDetectionsHeader) {
        throw ParseError(where + ": expected header '" +
                         std::string(kDetectionsHeader) + "'");
      }
      saw_header = true;
      continue;
    }
    if (line.starts_with("# group_id:")) {
      std::string value = line.substr(std::string("# group_id:").size());
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      group.group_id = value;
      continue;
    }
    if (line.starts_with("# provenance:")) {
      std::string value = line.substr(std::string("# provenance:").size());
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      group.provenance = value;
      continue;
    }
    if (line.empty() || line.front() == '#') continue;

    std::vector<std::string> tokens = split_ws(line);
    if (tokens.size() != 7) {
      throw ParseError(where + ": expected 7 fields "
                       "(image_id class x1 y1 x2 y2 score), got " +
                       std::to_string(tokens.size()));
    }
    BBox box;
    box.class_id = class_of(vocab, tokens[1], where);
    box.x1 = parse_double(tokens[2], where);
    box.y1 = parse_double(tokens[3], where);
    box.x2 = parse_double(tokens[4], where);
    box.y2 = parse_double(tokens[5], where);
    box.score = clamp_score(parse_double(tokens[6], where), where);
    check_geometry(box, where);
    group.add(tokens[0], box);
  }
  if (!saw_header) {
    throw ParseError(path.string() + ": empty file, expected header '" +
                     std::string(kDetectionsHeader) + "'");
  }
  return group;
}

void save_detections(const DetectionGroup& group,
                     const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw ParseError(path.string() + ": cannot write");
  out << kDetectionsHeader << "\n";
  out << "# group_id: " << group.group_id << "\n";
  if (!group.provenance.empty()) out << "# provenance: " << group.provenance << "\n";
  for (const auto& [image_id, dets] : group.per_image) {
    for (const BBox& b : canonical_sort(dets.boxes)) {
      out << image_id << ' ' << vocab.name_of(b.class_id) << ' ' << fmt_double(b.x1)
          << ' ' << fmt_double(b.y1) << ' ' << fmt_double(b.x2) << ' '
          << fmt_double(b.y2) << ' ' << fmt_double(b.score) << "\n";
    }
  }
}

GroundTruth load_ground_truth(const std::filesystem::path& path,
                              const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");

  GroundTruth gt;
  std::string line;
  std::size_t line_no = 0;
  std::size_t defaulted = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (!saw_header) {
      if (line != kGroundTruthHeader) {
        throw ParseError(where + ": expected header '" +
                         std::string(kGroundTruthHeader) + "'");
      }
      saw_header = true;
      continue;
    }
    if (line.empty() || line.front() == '#') continue;

    std::vector<std::string> tokens = split_ws(line);
    if (tokens.size() != 6 && tokens.size() != 7) {
      throw ParseError(where + ": expected 6 or 7 fields "
                       "(image_id class x1 y1 x2 y2 [difficulty]), got " +
                       std::to_string(tokens.size()));
    }
    GroundTruthBox g;
    g.box.class_id = class_of(vocab, tokens[1], where);
    g.box.x1 = parse_double(tokens[2], where);
    g.box.y1 = parse_double(tokens[3], where);
    g.box.x2 = parse_double(tokens[4], where);
    g.box.y2 = parse_double(tokens[5], where);
    g.box.score = 1.0;
    check_geometry(g.box, where);
    if (tokens.size() == 7) {
      if (tokens[6] == "L1") {
        g.difficulty = Difficulty::kL1;
      } else if (tokens[6] == "L2") {
        g.difficulty = Difficulty::kL2;
      } else {
        throw ParseError(where + ": difficulty must be L1 or L2, got '" +
                         tokens[6] + "'");
      }
    } else {
      g.difficulty = Difficulty::kL1;
      ++defaulted;
    }
    gt.per_image[tokens[0]].push_back(g);
  }
  if (!saw_header) {
    throw ParseError(path.string() + ": empty file, expected header '" +
                     std::string(kGroundTruthHeader) + "'");
  }
  if (defaulted > 0) {
    warn(path.string() + ": " + std::to_string(defaulted) +
         " record(s) without difficulty, defaulted to L1");
  }
  return gt;
}

void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path,
                       const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw ParseError(path.string() + ": cannot write");
  out << kGroundTruthHeader << "\n";
  for (const auto& [image_id, boxes] : gt.per_image) {
    std::vector<GroundTruthBox> sorted = boxes;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const GroundTruthBox& a, const GroundTruthBox& b) {
                       return canonical_less(a.box, b.box);
                     });
    for (const GroundTruthBox& g : sorted) {
      out << image_id << ' ' << vocab.name_of(g.box.class_id) << ' '
          << fmt_double(g.box.x1) << ' ' << fmt_double(g.box.y1) << ' '
          << fmt_double(g.box.x2) << ' ' << fmt_double(g.box.y2) << ' '
          << difficulty_name(g.difficulty) << "\n";
    }
  }
}

std::string format_report_table(const EvalReport& report, const Vocabulary& vocab,
                                const EvalConfig& cfg) {
  const std::string metric =
      std::string("AP/") + difficulty_name(cfg.level);
  std::size_t width = 10;
  for (const auto& [cls, ap] : report.per_class_ap) {
    width = std::max(width, vocab.name_of(cls).size());
  }

  std::ostringstream out;
  char buf[64];
  auto row = [&](const std::string& name, double value) {
    std::snprintf(buf, sizeof(buf), "%-*s  %8.4f\n", static_cast<int>(width),
                  name.c_str(), value);
    out << buf;
  };
  std::snprintf(buf, sizeof(buf), "%-*s  %8s\n", static_cast<int>(width), "class",
                metric.c_str());
  out << buf;
  out << std::string(width + 10, '-') << "\n";
  for (const auto& [cls, ap] : report.per_class_ap) {
    row(vocab.name_of(cls), ap);
  }
  out << std::string(width + 10, '-') << "\n";
  row("mAP", report.mAP);
  return out.str();
}

std::string format_report_json(const EvalReport& report, const Vocabulary& vocab,
                               const EvalConfig& cfg) {
  nlohmann::json doc;
  doc["level"] = difficulty_name(cfg.level);
  doc["mAP"] = report.mAP;
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [cls, ap] : report.per_class_ap) {
    per_class[vocab.name_of(cls)] = ap;
  }
  doc["per_class_ap"] = per_class;
  nlohmann::json thresholds = nlohmann::json::object();
  for (const auto& [cls, t] : cfg.per_class_iou) {
    if (static_cast<std::size_t>(cls) < vocab.names.size()) {
      thresholds[vocab.name_of(cls)] = t;
    }
  }
  doc["iou_thresholds"] = thresholds;
  return doc.dump(2) + "\n";
}

std::string format_merge_trace(const MergeTree& tree) {
  std::ostringstream out;
  char buf[32];
  auto fmt_map = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };

  out << "# merge trace\n";
  for (const MergeNodePtr& leaf : tree.leaves) {
    out << "leaf " << leaf->group.group_id << " mAP=" << fmt_map(leaf->accuracy.mAP)
        << "\n";
  }
  std::vector<int> levels;
  for (const PairEvaluation& e : tree.log) levels.push_back(e.level);
  for (const MergeStep& s : tree.steps) levels.push_back(s.level);
  std::sort(levels.begin(), levels.end(), std::greater<int>());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

  for (int level : levels) {
    out << "level " << level << "\n";
    for (const PairEvaluation& e : tree.log) {
      if (e.level != level) continue;
      out << "  eval (" << e.left_id << ", " << e.right_id << ") op=" << op_name(e.op)
          << " mAP=" << fmt_map(e.map) << "\n";
    }
    for (const MergeStep& s : tree.steps) {
      if (s.level != level) continue;
      out << "  merge (" << s.left_id << ", " << s.right_id << ") op=" << op_name(s.op)
          << " mAP=" << fmt_map(s.map) << " -> " << s.merged_id << "\n";
    }
  }
  if (tree.root) {
    out << "root " << tree.root->group.group_id
        << " mAP=" << fmt_map(tree.root->accuracy.mAP) << "\n";
  }
  return out.str();
}

}  // namespace boxfuse
