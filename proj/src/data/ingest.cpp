#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>

#include "nmcdr/data/dataset.hpp"

namespace nmcdr::data {

InputFormat parse_format(std::string_view name) {
  if (name == "tsv-ratings") return InputFormat::TsvRatings;
  if (name == "csv-ratings") return InputFormat::CsvRatings;
  throw DataError("unknown input format '" + std::string(name) + "' (expected tsv-ratings or csv-ratings)");
}

std::string_view format_name(InputFormat format) noexcept {
  return format == InputFormat::TsvRatings ? "tsv-ratings" : "csv-ratings";
}

namespace {

// Splits one RFC-4180 record. Quoted fields may span lines; `line_no` advances accordingly.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line_no,
                     const std::string& source, std::string& first_line) {
  std::string line;
  if (!std::getline(in, line)) return false;
  ++line_no;
  const std::size_t start_line = line_no;
  first_line = line;
  fields.clear();
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  std::size_t i = 0;
  while (true) {
    if (i >= line.size()) {
      if (quoted) {
        std::string next;
        if (!std::getline(in, next)) throw ParseError(source, start_line, "unterminated quoted field");
        ++line_no;
        field.push_back('\n');
        line = std::move(next);
        i = 0;
        continue;
      }
      break;
    }
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty() && !was_quoted) {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else if (c == '\r' && i + 1 == line.size()) {
      // tolerate CRLF
    } else {
      if (was_quoted) throw ParseError(source, start_line, "characters after closing quote");
      field.push_back(c);
    }
    ++i;
  }
  fields.push_back(std::move(field));
  return true;
}

bool read_tsv_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line_no,
                     std::string& first_line) {
  std::string line;
  if (!std::getline(in, line)) return false;
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  first_line = line;
  fields.clear();
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return true;
}

template <typename T>
std::optional<T> parse_number(const std::string& text, const std::string& source, std::size_t line,
                              const char* what) {
  if (text.empty()) return std::nullopt;
  T value{};
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(source, line, std::string("invalid ") + what + " '" + text + "'");
  }
  return value;
}

}  // namespace

std::vector<RawInteraction> parse_interactions(std::istream& in, InputFormat format, const std::string& source) {
  std::vector<RawInteraction> out;
  std::vector<std::string> fields;
  std::string first_line;
  std::size_t line_no = 0;
  while (true) {
    const std::size_t before = line_no;
    const bool got = format == InputFormat::CsvRatings ? read_csv_record(in, fields, line_no, source, first_line)
                                                        : read_tsv_record(in, fields, line_no, first_line);
    if (!got) break;
    const std::size_t line = before + 1;
    if (first_line.empty() || first_line.front() == '#') continue;
    if (fields.size() < 2 || fields.size() > 4) {
      throw ParseError(source, line, "expected 2 to 4 fields, found " + std::to_string(fields.size()));
    }
    RawInteraction r;
    r.user_key = fields[0];
    r.item_key = fields[1];
    if (r.user_key.empty()) throw ParseError(source, line, "empty user key");
    if (r.item_key.empty()) throw ParseError(source, line, "empty item key");
    if (fields.size() > 2) r.rating = parse_number<double>(fields[2], source, line, "rating");
    if (fields.size() > 3) r.timestamp = parse_number<std::int64_t>(fields[3], source, line, "timestamp");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RawInteraction> read_interactions(const std::filesystem::path& path, InputFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_interactions(in, format, path.string());
}

DomainIndex DomainIndex::build(const std::vector<Edge>& edges, std::size_t min_interactions) {
  // Distinct items per user key, keeping the latest timestamp per (user, item).
  struct Pending {
    std::size_t first_seen;
    std::unordered_map<std::string, std::optional<std::int64_t>> items;
  };
  std::unordered_map<std::string, Pending> by_user;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& e = edges[k];
    auto [it, fresh] = by_user.try_emplace(e.user_key, Pending{k, {}});
    auto [slot, new_item] = it->second.items.try_emplace(e.item_key, e.timestamp);
    if (!new_item && e.timestamp && (!slot->second || *slot->second < *e.timestamp)) slot->second = e.timestamp;
  }

  DomainIndex idx;
  for (const auto& e : edges) {
    auto it = by_user.find(e.user_key);
    if (it == by_user.end() || it->second.items.size() < min_interactions) continue;
    if (!idx.user_ids_.contains(e.user_key)) {
      idx.user_ids_.emplace(e.user_key, static_cast<Id>(idx.user_keys_.size()));
      idx.user_keys_.push_back(e.user_key);
      idx.interactions_.emplace_back();
    }
    if (!idx.item_ids_.contains(e.item_key)) {
      idx.item_ids_.emplace(e.item_key, static_cast<Id>(idx.item_keys_.size()));
      idx.item_keys_.push_back(e.item_key);
    }
  }
  for (Id u = 0; u < idx.user_keys_.size(); ++u) {
    const auto& pending = by_user.at(idx.user_keys_[u]);
    auto& list = idx.interactions_[u];
    list.reserve(pending.items.size());
    for (const auto& [item_key, ts] : pending.items) list.push_back({idx.item_ids_.at(item_key), ts});
    std::sort(list.begin(), list.end(), [](const Interaction& a, const Interaction& b) { return a.item < b.item; });
    idx.interaction_count_ += list.size();
  }
  return idx;
}

DomainIndex DomainIndex::from_indexed(std::vector<std::string> user_keys, std::vector<std::string> item_keys,
                                      std::vector<std::vector<Interaction>> interactions) {
  if (interactions.size() != user_keys.size()) throw DataError("interaction lists do not match user count");
  DomainIndex idx;
  idx.user_keys_ = std::move(user_keys);
  idx.item_keys_ = std::move(item_keys);
  for (Id u = 0; u < idx.user_keys_.size(); ++u) {
    if (!idx.user_ids_.emplace(idx.user_keys_[u], u).second) throw DataError("duplicate user key " + idx.user_keys_[u]);
  }
  for (Id i = 0; i < idx.item_keys_.size(); ++i) {
    if (!idx.item_ids_.emplace(idx.item_keys_[i], i).second) throw DataError("duplicate item key " + idx.item_keys_[i]);
  }
  idx.interactions_ = std::move(interactions);
  for (auto& list : idx.interactions_) {
    std::sort(list.begin(), list.end(), [](const Interaction& a, const Interaction& b) { return a.item < b.item; });
    for (std::size_t k = 0; k < list.size(); ++k) {
      if (list[k].item >= idx.item_keys_.size()) throw DataError("interaction refers to an unknown item");
      if (k > 0 && list[k].item == list[k - 1].item) throw DataError("duplicate interaction");
    }
    idx.interaction_count_ += list.size();
  }
  return idx;
}

DomainIndex DomainIndex::from_raw(const std::vector<RawInteraction>& raw, std::size_t min_interactions) {
  std::vector<Edge> edges;
  edges.reserve(raw.size());
  for (const auto& r : raw) edges.push_back({r.user_key, r.item_key, r.timestamp});
  return build(edges, min_interactions);
}

std::optional<Id> DomainIndex::find_user(const std::string& key) const {
  auto it = user_ids_.find(key);
  if (it == user_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<Id> DomainIndex::find_item(const std::string& key) const {
  auto it = item_ids_.find(key);
  if (it == item_ids_.end()) return std::nullopt;
  return it->second;
}

bool DomainIndex::has_interaction(Id u, Id item) const {
  const auto& list = interactions_.at(u);
  auto it = std::lower_bound(list.begin(), list.end(), item,
                             [](const Interaction& a, Id value) { return a.item < value; });
  return it != list.end() && it->item == item;
}

DomainStats DomainIndex::stats() const {
  DomainStats s;
  s.users = user_count();
  s.items = item_count();
  s.ratings = interaction_count();
  const double cells = static_cast<double>(s.users) * static_cast<double>(s.items);
  s.density = cells > 0 ? static_cast<double>(s.ratings) / cells : 0.0;
  return s;
}

std::vector<DomainIndex::Edge> DomainIndex::edges() const {
  std::vector<Edge> out;
  out.reserve(interaction_count_);
  for (Id u = 0; u < user_keys_.size(); ++u)
    for (const auto& it : interactions_[u]) out.push_back({user_keys_[u], item_keys_[it.item], it.timestamp});
  return out;
}

DomainIndex ingest(const std::filesystem::path& path, InputFormat format, std::size_t min_interactions) {
  auto raw = read_interactions(path, format);
  auto idx = DomainIndex::from_raw(raw, min_interactions);
  if (idx.user_count() == 0) {
    throw DataError(path.string() + ": no users left after filtering (min interactions " +
                    std::to_string(min_interactions) + ")");
  }
  return idx;
}

}  // namespace nmcdr::data
