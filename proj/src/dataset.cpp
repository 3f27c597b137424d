#include "vixen/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "vixen/binary_io.hpp"
#include "vixen/random.hpp"

namespace vixen {

using json = nlohmann::ordered_json;

std::string ManifestIssue::text() const {
  std::string out = line == 0 ? std::string("manifest") : "line " + std::to_string(line);
  if (!field.empty()) out += ": field '" + field + "'";
  return out + ": " + message;
}

namespace {

std::vector<std::string> issue_texts(const std::vector<ManifestIssue>& issues) {
  std::vector<std::string> out;
  out.reserve(issues.size());
  for (const auto& i : issues) out.push_back(i.text());
  return out;
}

bool is_uri(std::string_view ref) { return ref.find("://") != std::string_view::npos; }

}  // namespace

ManifestError::ManifestError(std::vector<ManifestIssue> issues)
    : ConfigError(issue_texts(issues)), issues_(std::move(issues)) {}

std::vector<ImagePairRecord> parse_manifest(std::string_view text, const ManifestOptions& options) {
  std::vector<ImagePairRecord> records;
  std::vector<ManifestIssue> issues;
  std::map<std::string, std::size_t> first_line;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      issues.push_back({line_no, "", std::string("malformed JSON: ") + e.what()});
      continue;
    }
    if (!j.is_object()) {
      issues.push_back({line_no, "", "expected a JSON object"});
      continue;
    }
    const std::size_t before = issues.size();
    for (const auto& [key, _] : j.items()) {
      if (std::find(kManifestFields.begin(), kManifestFields.end(), key) == kManifestFields.end()) {
        issues.push_back({line_no, key, "unknown field"});
      }
    }
    ImagePairRecord r;
    auto text_field = [&](const char* name, std::string& out, bool non_empty) {
      auto it = j.find(name);
      if (it == j.end()) {
        issues.push_back({line_no, name, "missing"});
      } else if (!it->is_string()) {
        issues.push_back({line_no, name, "must be a string"});
      } else {
        out = it->get<std::string>();
        if (non_empty && out.empty()) issues.push_back({line_no, name, "must not be empty"});
      }
    };
    text_field("id", r.id, true);
    text_field("src_image", r.src_image, true);
    text_field("edit_image", r.edit_image, true);
    text_field("caption_src", r.caption_src, false);
    text_field("caption_edit", r.caption_edit, false);
    text_field("edit_instruction", r.edit_instruction, false);
    if (auto it = j.find("change_summary"); it != j.end() && !it->is_null()) {
      if (it->is_string()) {
        r.change_summary = it->get<std::string>();
      } else {
        issues.push_back({line_no, "change_summary", "must be a string or null"});
      }
    }
    if (auto it = j.find("correspondence_score"); it != j.end() && !it->is_null()) {
      if (!it->is_number()) {
        issues.push_back({line_no, "correspondence_score", "must be a number or null"});
      } else {
        const double s = it->get<double>();
        if (!(s >= 1.0 && s <= 5.0)) {
          std::ostringstream msg;
          msg << "value " << s << " outside [1, 5]";
          issues.push_back({line_no, "correspondence_score", msg.str()});
        }
        r.correspondence_score = s;
      }
    }
    if (!r.id.empty()) {
      auto [it, fresh] = first_line.emplace(r.id, line_no);
      if (!fresh) {
        issues.push_back({line_no, "id", "duplicate id '" + r.id + "' (first on line " + std::to_string(it->second) + ")"});
      }
    }
    if (options.check_images) {
      for (const auto& [name, ref] : {std::pair{"src_image", &r.src_image}, std::pair{"edit_image", &r.edit_image}}) {
        if (ref->empty() || is_uri(*ref)) continue;
        const std::filesystem::path p = std::filesystem::path(*ref).is_absolute() ? std::filesystem::path(*ref)
                                                                                  : options.base_dir / *ref;
        if (!std::filesystem::exists(p)) issues.push_back({line_no, name, "image not found: " + p.string()});
      }
    }
    if (issues.size() == before) records.push_back(std::move(r));
  }
  if (!issues.empty()) throw ManifestError(std::move(issues));
  return records;
}

std::vector<ImagePairRecord> load_manifest(const std::filesystem::path& path, bool check_images) {
  ManifestOptions o;
  o.check_images = check_images;
  o.base_dir = path.parent_path();
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ManifestError({{0, "", e.what()}});
  }
  return parse_manifest(text, o);
}

json record_to_json(const ImagePairRecord& r) {
  json j;
  j["id"] = r.id;
  j["src_image"] = r.src_image;
  j["edit_image"] = r.edit_image;
  j["caption_src"] = r.caption_src;
  j["caption_edit"] = r.caption_edit;
  j["edit_instruction"] = r.edit_instruction;
  if (r.change_summary) j["change_summary"] = *r.change_summary;
  if (r.correspondence_score) j["correspondence_score"] = *r.correspondence_score;
  return j;
}

std::string manifest_text(const std::vector<ImagePairRecord>& records) {
  std::string out;
  for (const auto& r : records) out += record_to_json(r).dump() + "\n";
  return out;
}

void save_manifest(const std::filesystem::path& path, const std::vector<ImagePairRecord>& records) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, manifest_text(records));
}

// --- few-shot prompt --------------------------------------------------------

namespace {

constexpr std::string_view kFewShotHead =
    "Given descriptions of two images and the edit task, summarize the change between them:\n"
    "Example 1:\n"
    "Image 1: An abstract oil painting of a landscape at sunset. A sea and a single tree in the foreground and a "
    "hill in the background.\n"
    "Image 2: An abstract oil painting of a landscape at night. A sea and a single tree in the foreground and a "
    "hill in the background.\n"
    "Edit: Change the time of day from sunset to night.\n"
    "Summary: Time of day is changed from sunset to night. The sun is removed and there is no more orange and "
    "purple colors. Instead, the moon is casting a white light reflected in the sea.\n"
    "Example 2:\n"
    "Image 1: One Of The Best Wet Street Scenes In Watercolor I Have Seen\n"
    "Image 2: One Of The Best Wet Street Scenes In Charcoal I Have Seen\n"
    "Edit: Change the image style to charcoal drawing\n"
    "Summary: The style of the image is changed from a watercolor to a charcoal drawing.\n"
    "Example 3:\n"
    "Image 1: Woman Eating Spaghetti In Restaurant 5 Photograph by Alfred Eisenstaedt\n"
    "Image 2: Woman Eating Soup In Restaurant 5 Photograph by Alfred Eisenstaedt\n"
    "Edit: Substitute the spaghetti with a soup.\n"
    "Summary: The spaghetti has been replaced by soup.\n";

constexpr std::string_view kImage1 = "Image 1: ";
constexpr std::string_view kImage2 = "\nImage 2: ";
constexpr std::string_view kEdit = "\nEdit: ";
constexpr std::string_view kSummary = "\nSummary:";

}  // namespace

std::string build_fewshot_prompt(const ImagePairRecord& r) {
  std::vector<std::string> missing;
  if (r.caption_src.empty()) missing.emplace_back("record '" + r.id + "': caption_src is empty");
  if (r.caption_edit.empty()) missing.emplace_back("record '" + r.id + "': caption_edit is empty");
  if (r.edit_instruction.empty()) missing.emplace_back("record '" + r.id + "': edit_instruction is empty");
  if (!missing.empty()) throw ConfigError(std::move(missing));
  std::string out;
  out.reserve(fewshot_template_length() + r.caption_src.size() + r.caption_edit.size() + r.edit_instruction.size());
  out.append(kFewShotHead);
  out.append(kImage1).append(r.caption_src);
  out.append(kImage2).append(r.caption_edit);
  out.append(kEdit).append(r.edit_instruction);
  out.append(kSummary);
  return out;
}

std::size_t fewshot_template_length() {
  return kFewShotHead.size() + kImage1.size() + kImage2.size() + kEdit.size() + kSummary.size();
}

// --- scores -----------------------------------------------------------------

ScoreHistogram score_stats(const std::vector<ImagePairRecord>& records) {
  ScoreHistogram h;
  for (const auto& r : records) {
    if (!r.correspondence_score) {
      ++h.unscored;
      continue;
    }
    const long bin = std::lround(*r.correspondence_score);
    if (bin < 1 || bin > 5) throw ConfigError({"record '" + r.id + "': correspondence score outside [1, 5]"});
    ++h.counts[static_cast<std::size_t>(bin - 1)];
    ++h.scored;
  }
  if (h.scored > 0) {
    for (std::size_t i = 0; i < 5; ++i) h.percent[i] = 100.0 * static_cast<double>(h.counts[i]) / h.scored;
  }
  return h;
}

std::vector<ImagePairRecord> filter_min_score(const std::vector<ImagePairRecord>& records, double min_score) {
  std::vector<ImagePairRecord> out;
  for (const auto& r : records) {
    if (r.correspondence_score && *r.correspondence_score >= min_score) out.push_back(r);
  }
  return out;
}

// --- splits -----------------------------------------------------------------

SplitSpec split_spec_from_json(const json& j) {
  std::vector<std::string> problems;
  SplitSpec spec;
  if (!j.is_object()) throw ConfigError({"split spec must be an object"});
  for (const auto& [key, _] : j.items()) {
    if (key != "partitions" && key != "seed") problems.push_back("split spec: unknown key '" + key + "'");
  }
  if (j.contains("seed")) {
    if (j["seed"].is_number_unsigned()) {
      spec.seed = j["seed"].get<std::uint64_t>();
    } else {
      problems.emplace_back("split spec: seed must be a non-negative integer");
    }
  }
  if (!j.contains("partitions") || !j["partitions"].is_array()) {
    problems.emplace_back("split spec: 'partitions' must be an array");
  } else {
    for (const auto& p : j["partitions"]) {
      Partition part;
      if (!p.is_object() || !p.contains("name") || !p["name"].is_string()) {
        problems.emplace_back("split spec: every partition needs a string 'name'");
        continue;
      }
      part.name = p["name"].get<std::string>();
      for (const auto& [key, _] : p.items()) {
        if (key != "name" && key != "fraction" && key != "ids") {
          problems.push_back("partition '" + part.name + "': unknown key '" + key + "'");
        }
      }
      if (p.contains("fraction")) {
        if (p["fraction"].is_number()) {
          part.fraction = p["fraction"].get<double>();
        } else {
          problems.push_back("partition '" + part.name + "': fraction must be a number");
        }
      }
      if (p.contains("ids")) {
        if (p["ids"].is_array() && std::all_of(p["ids"].begin(), p["ids"].end(), [](const json& x) { return x.is_string(); })) {
          part.ids = p["ids"].get<std::vector<std::string>>();
        } else {
          problems.push_back("partition '" + part.name + "': ids must be an array of strings");
        }
      }
      spec.partitions.push_back(std::move(part));
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return spec;
}

json to_json(const SplitSpec& spec) {
  json parts = json::array();
  for (const auto& p : spec.partitions) {
    json o;
    o["name"] = p.name;
    if (p.fraction) {
      o["fraction"] = *p.fraction;
    } else {
      o["ids"] = p.ids;
    }
    parts.push_back(o);
  }
  return json{{"partitions", parts}, {"seed", spec.seed}};
}

std::vector<std::pair<std::string, std::vector<std::string>>> split(const std::vector<ImagePairRecord>& records,
                                                                    const SplitSpec& spec) {
  std::vector<std::string> problems;
  if (spec.partitions.empty()) problems.emplace_back("split spec has no partitions");
  std::set<std::string> names;
  std::size_t with_fraction = 0;
  for (const auto& p : spec.partitions) {
    if (!names.insert(p.name).second) problems.push_back("partition name '" + p.name + "' repeats");
    if (p.fraction) ++with_fraction;
    if (p.fraction && !p.ids.empty()) problems.push_back("partition '" + p.name + "' has both a fraction and ids");
  }
  const bool fraction_mode = with_fraction > 0;
  if (fraction_mode && with_fraction != spec.partitions.size()) {
    problems.emplace_back("either every partition has a fraction or none does");
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));

  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.id);
  std::vector<std::pair<std::string, std::vector<std::string>>> out;

  if (fraction_mode) {
    double sum = 0.0;
    for (const auto& p : spec.partitions) {
      if (!(*p.fraction >= 0.0 && *p.fraction <= 1.0)) {
        problems.push_back("partition '" + p.name + "': fraction outside [0, 1]");
      }
      sum += *p.fraction;
    }
    if (std::abs(sum - 1.0) > 1e-9) problems.push_back("fractions sum to " + std::to_string(sum) + ", not 1");
    if (!problems.empty()) throw ConfigError(std::move(problems));

    Rng rng(spec.seed);
    shuffle(ids, rng);
    const double n = static_cast<double>(ids.size());
    std::vector<std::size_t> sizes;
    std::vector<double> remainders;
    std::size_t assigned = 0;
    for (const auto& p : spec.partitions) {
      const double exact = *p.fraction * n;
      const auto base = static_cast<std::size_t>(std::floor(exact));
      sizes.push_back(base);
      remainders.push_back(exact - static_cast<double>(base));
      assigned += base;
    }
    std::vector<std::size_t> order(sizes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t i = 0; assigned < ids.size(); i = (i + 1) % order.size(), ++assigned) ++sizes[order[i]];
    std::size_t start = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      out.emplace_back(spec.partitions[i].name,
                       std::vector<std::string>(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                                ids.begin() + static_cast<std::ptrdiff_t>(start + sizes[i])));
      start += sizes[i];
    }
    return out;
  }

  const std::set<std::string> known(ids.begin(), ids.end());
  std::map<std::string, std::string> owner;
  for (const auto& p : spec.partitions) {
    for (const auto& id : p.ids) {
      if (!known.count(id)) problems.push_back("partition '" + p.name + "': unknown id '" + id + "'");
      auto [it, fresh] = owner.emplace(id, p.name);
      if (!fresh) problems.push_back("id '" + id + "' is in both '" + it->second + "' and '" + p.name + "'");
    }
    out.emplace_back(p.name, p.ids);
  }
  std::size_t unassigned = 0;
  for (const auto& id : ids) {
    if (!owner.count(id) && ++unassigned <= 10) problems.push_back("id '" + id + "' is not in any partition");
  }
  if (unassigned > 10) problems.push_back("... and " + std::to_string(unassigned - 10) + " more unassigned ids");
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return out;
}

}  // namespace vixen
