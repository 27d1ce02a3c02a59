// Copyright 2026 The adaudit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "adaudit/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adaudit/csv.hpp"
#include "adaudit/util.hpp"

namespace adaudit {

namespace {

using nlohmann::json;

const char* kImpressionFields[] = {"user_id", "timestamp", "ad_id",
                                   "source",  "title",     "body",
                                   "image_refs"};

AdImpression impression_from_json(const json& j, std::size_t row) {
  if (!j.is_object()) throw ParseError("impression is not an object", row);
  for (const char* key : {"user_id", "timestamp", "ad_id", "source"}) {
    if (!j.contains(key)) {
      throw SchemaError("row " + std::to_string(row) +
                        ": missing required field '" + key + "'");
    }
  }
  AdImpression imp;
  imp.user_id = j.at("user_id").get<std::string>();
  if (imp.user_id.empty()) {
    throw SchemaError("row " + std::to_string(row) + ": empty user_id");
  }
  const json& ts = j.at("timestamp");
  try {
    if (ts.is_number_integer()) {
      imp.timestamp = ts.get<std::int64_t>();
      if (imp.timestamp < 0) throw std::invalid_argument("negative");
    } else if (ts.is_string()) {
      imp.timestamp = parse_timestamp(ts.get<std::string>());
    } else {
      throw std::invalid_argument("timestamp must be int or string");
    }
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("bad timestamp: ") + e.what(), row);
  }
  imp.ad_id = j.at("ad_id").get<std::string>();
  imp.source = trim(j.at("source").get<std::string>());
  if (j.contains("title") && j.at("title").is_string()) {
    imp.title = strip_html(j.at("title").get<std::string>());
  }
  if (j.contains("body") && j.at("body").is_string()) {
    imp.body = strip_html(j.at("body").get<std::string>());
  }
  if (j.contains("image_refs")) {
    const json& refs = j.at("image_refs");
    if (refs.is_array()) {
      for (const auto& r : refs) {
        imp.image_refs.push_back(r.get<std::string>());
      }
    } else if (refs.is_string()) {
      for (const auto& part : split(refs.get<std::string>(), ';')) {
        std::string t = trim(part);
        if (!t.empty()) imp.image_refs.push_back(t);
      }
    } else if (!refs.is_null()) {
      throw ParseError("image_refs must be array or string", row);
    }
  }
  return imp;
}

std::vector<AdImpression> parse_impressions_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open file: " + path);
  std::vector<AdImpression> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    std::string t = trim(line);
    if (t.empty()) continue;
    json j;
    try {
      j = json::parse(t);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), row);
    }
    out.push_back(impression_from_json(j, row));
  }
  return out;
}

std::vector<AdImpression> parse_impressions_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open file: " + path);
  CsvReader reader(in);
  std::vector<std::string> fields;
  if (!reader.read_row(fields)) {
    return {};
  }
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    col[to_lower(trim(fields[i]))] = i;
  }
  for (const char* key : {"user_id", "timestamp", "ad_id", "source"}) {
    if (!col.count(key)) {
      throw SchemaError(path + ": missing required column '" +
                        std::string(key) + "'");
    }
  }
  auto get = [&](const std::vector<std::string>& row,
                 const char* key) -> std::string {
    auto it = col.find(key);
    if (it == col.end() || it->second >= row.size()) return {};
    return row[it->second];
  };

  std::vector<AdImpression> out;
  while (reader.read_row(fields)) {
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;
    std::size_t row = reader.row_number();
    AdImpression imp;
    imp.user_id = trim(get(fields, "user_id"));
    if (imp.user_id.empty()) {
      throw SchemaError("row " + std::to_string(row) + ": empty user_id");
    }
    try {
      imp.timestamp = parse_timestamp(get(fields, "timestamp"));
    } catch (const std::invalid_argument& e) {
      throw ParseError(std::string("bad timestamp: ") + e.what(), row);
    }
    imp.ad_id = trim(get(fields, "ad_id"));
    imp.source = trim(get(fields, "source"));
    imp.title = strip_html(get(fields, "title"));
    imp.body = strip_html(get(fields, "body"));
    for (const auto& part : split(get(fields, "image_refs"), ';')) {
      std::string t = trim(part);
      if (!t.empty()) imp.image_refs.push_back(t);
    }
    out.push_back(std::move(imp));
  }
  return out;
}

}  // namespace

ImpressionFormat impression_format_from_path(const std::string& path) {
  if (path.size() >= 4 && to_lower(path.substr(path.size() - 4)) == ".csv") {
    return ImpressionFormat::kCsv;
  }
  return ImpressionFormat::kJsonl;
}

std::vector<AdImpression> parse_impressions(const std::string& path,
                                            ImpressionFormat format) {
  return format == ImpressionFormat::kCsv ? parse_impressions_csv(path)
                                          : parse_impressions_jsonl(path);
}

std::vector<AdImpression> parse_impressions(const std::string& path) {
  return parse_impressions(path, impression_format_from_path(path));
}

void write_impressions_jsonl(const std::string& path,
                             const std::vector<AdImpression>& impressions) {
  std::ostringstream out;
  for (const AdImpression& imp : impressions) {
    json j;
    j["user_id"] = imp.user_id;
    j["timestamp"] = imp.timestamp;
    j["ad_id"] = imp.ad_id;
    j["source"] = imp.source;
    j["title"] = imp.title;
    j["body"] = imp.body;
    j["image_refs"] = imp.image_refs;
    out << j.dump() << '\n';
  }
  write_text_file(path, out.str());
}

std::string strip_html(std::string_view text) {
  auto strip_tags = [](const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool in_tag = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      char c = s[i];
      if (!in_tag && c == '<') {
        // Only treat '<' as a tag opener when it plausibly starts one;
        // a bare "a < b" comparison is kept as text.
        std::size_t j = i + 1;
        if (j < s.size() && (std::isalpha(static_cast<unsigned char>(s[j])) ||
                             s[j] == '/' || s[j] == '!')) {
          in_tag = true;
          // Block-level separations become spaces so words do not fuse.
          out.push_back(' ');
          continue;
        }
      }
      if (in_tag) {
        if (c == '>') in_tag = false;
        continue;
      }
      out.push_back(c);
    }
    return out;
  };

  auto decode_entities = [](const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
      if (s[i] != '&') {
        out.push_back(s[i]);
        ++i;
        continue;
      }
      std::size_t semi = s.find(';', i + 1);
      if (semi == std::string::npos || semi - i > 10) {
        out.push_back(s[i]);
        ++i;
        continue;
      }
      std::string name = s.substr(i + 1, semi - i - 1);
      std::string repl;
      if (name == "amp") {
        repl = "&";
      } else if (name == "lt") {
        repl = "<";
      } else if (name == "gt") {
        repl = ">";
      } else if (name == "quot") {
        repl = "\"";
      } else if (name == "apos") {
        repl = "'";
      } else if (name == "nbsp") {
        repl = " ";
      } else if (name.size() > 1 && name[0] == '#') {
        long code = -1;
        try {
          code = (name[1] == 'x' || name[1] == 'X')
                     ? std::stol(name.substr(2), nullptr, 16)
                     : std::stol(name.substr(1));
        } catch (...) {
          code = -1;
        }
        if (code >= 32 && code < 127) {
          repl = std::string(1, static_cast<char>(code));
        } else if (code == 160) {
          repl = " ";
        } else {
          out.append(s, i, semi - i + 1);
          i = semi + 1;
          continue;
        }
      } else {
        out.push_back(s[i]);
        ++i;
        continue;
      }
      out += repl;
      i = semi + 1;
    }
    return out;
  };

  // Iterate to a fixed point so nested escapes ("&amp;lt;b&amp;gt;") fully
  // unwrap and the function is idempotent by construction. Every rewrite
  // strictly shrinks the string, so this terminates.
  std::string current(text);
  for (int round = 0; round < 64; ++round) {
    std::string next = decode_entities(strip_tags(current));
    if (next == current) break;
    current = std::move(next);
  }
  return collapse_whitespace(current);
}

std::vector<AdImpression> filter_source(std::vector<AdImpression> impressions,
                                        std::string_view keep) {
  std::string want = to_lower(trim(keep));
  std::erase_if(impressions, [&](const AdImpression& imp) {
    return to_lower(trim(imp.source)) != want;
  });
  return impressions;
}

std::map<std::string, DemographicProfile> load_profiles(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open file: " + path);
  CsvReader reader(in);
  std::vector<std::string> fields;
  if (!reader.read_row(fields)) {
    throw SchemaError(path + ": empty profiles file");
  }
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    col[to_lower(trim(fields[i]))] = i;
  }
  if (!col.count("user_id")) {
    throw SchemaError(path + ": missing required column 'user_id'");
  }
  for (Attribute a : kAllAttributes) {
    if (!col.count(std::string(attribute_key(a)))) {
      throw SchemaError(path + ": missing required column '" +
                        std::string(attribute_key(a)) + "'");
    }
  }

  std::map<std::string, DemographicProfile> out;
  while (reader.read_row(fields)) {
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;
    std::size_t row = reader.row_number();
    DemographicProfile p;
    p.user_id = trim(fields[col["user_id"]]);
    if (p.user_id.empty()) {
      throw SchemaError("row " + std::to_string(row) + ": empty user_id");
    }
    for (Attribute a : kAllAttributes) {
      std::size_t idx = col[std::string(attribute_key(a))];
      std::string raw = idx < fields.size() ? fields[idx] : std::string();
      auto level = parse_profile_level(a, raw);
      if (!level) {
        throw SchemaError("row " + std::to_string(row) + ", field '" +
                          std::string(attribute_key(a)) +
                          "': unknown category '" + trim(raw) + "'");
      }
      p.levels[static_cast<std::size_t>(a)] =
          static_cast<std::int8_t>(*level);
    }
    if (!out.emplace(p.user_id, p).second) {
      throw SchemaError("row " + std::to_string(row) +
                        ": duplicate user_id '" + p.user_id + "'");
    }
  }
  return out;
}

void write_profiles_csv(
    const std::string& path,
    const std::map<std::string, DemographicProfile>& profiles) {
  std::ostringstream buf;
  CsvWriter writer(buf);
  std::vector<std::string> row = {"user_id"};
  for (Attribute a : kAllAttributes) {
    row.emplace_back(attribute_key(a));
  }
  writer.write_row(row);
  for (const auto& [user_id, p] : profiles) {
    row.clear();
    row.push_back(user_id);
    for (Attribute a : kAllAttributes) row.push_back(p.level(a));
    writer.write_row(row);
  }
  write_text_file(path, buf.str());
}

CohortDataset make_cohort(std::vector<AdImpression> impressions,
                          std::map<std::string, DemographicProfile> profiles) {
  CohortDataset ds;
  ds.profiles = std::move(profiles);
  ds.impressions.reserve(impressions.size());
  for (auto& imp : impressions) {
    if (ds.profiles.count(imp.user_id) == 0) {
      ++ds.dropped_without_profile;
      continue;
    }
    ds.impressions.push_back(std::move(imp));
  }
  std::sort(ds.impressions.begin(), ds.impressions.end(),
            [](const AdImpression& a, const AdImpression& b) {
              if (a.user_id != b.user_id) return a.user_id < b.user_id;
              if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
              return a.ad_id < b.ad_id;
            });
  return ds;
}

}  // namespace adaudit
