// Copyright 2026 The gcrec Authors.
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

#include "gcrec/prompt.hpp"

#include <algorithm>
#include <optional>

#include <json.hpp>

#include "gcrec/common.hpp"

namespace gcrec {
namespace {

constexpr std::string_view kStructural = "\\,()[];";

bool IsStructural(char c) { return kStructural.find(c) != std::string_view::npos; }

std::string Assemble(const PromptTemplate& t, std::string_view target,
                     const std::optional<std::string>& block) {
  std::string s;
  s.reserve(t.instruction.size() + target.size() + 256 +
            (block ? block->size() : 0));
  s += t.instruction;
  s += ' ';
  s += t.target_label;
  s += '[';
  s += target;
  s += "]. ";
  if (block) {
    s += t.neighbor_label;
    s += '[';
    s += *block;
    s += "].";
  } else {
    s += t.no_neighbors;
  }
  return s;
}

std::string JoinList(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (k) out += sep;
    out += parts[k];
  }
  return out;
}

// Shared budget loop over already-rendered top-level entries,
// joined with `sep` inside the neighbor brackets.
RenderedPrompt FitToBudget(std::string_view target,
                           std::vector<std::string> entries,
                           std::vector<std::size_t> entry_sizes,
                           std::string_view sep, bool truncated,
                           const PromptTemplate& tmpl,
                           const RenderBudget& budget) {
  RenderedPrompt out;
  out.truncated = truncated;
  auto render = [&](std::string_view tgt) {
    std::optional<std::string> block;
    if (!entries.empty()) block = JoinList(entries, sep);
    return Assemble(tmpl, tgt, block);
  };

  std::string text = render(target);
  while (CountTokens(text) > budget.max_prompt_tokens && !entries.empty()) {
    entries.pop_back();
    entry_sizes.pop_back();
    out.truncated = true;
    text = render(target);
  }
  if (CountTokens(text) > budget.max_prompt_tokens) {
    const std::size_t ntok = CountTokens(target);
    bool fitted = false;
    for (std::size_t k = ntok; k-- > 1;) {
      text = render(ClipToTokens(target, k));
      if (CountTokens(text) <= budget.max_prompt_tokens) {
        fitted = true;
        break;
      }
    }
    if (!fitted) {
      throw ValidationError("prompt budget of " +
                            std::to_string(budget.max_prompt_tokens) +
                            " tokens cannot hold the target description");
    }
    out.truncated = true;
  }
  out.text = std::move(text);
  out.neighbors_used = entries.size();
  for (std::size_t n : entry_sizes) out.descriptions += n;
  return out;
}

std::string RenderTreeNode(const NeighborTree& node, const PromptTemplate& tmpl,
                           const RenderBudget& budget, int level, bool top,
                           bool& clipped, std::size_t& count) {
  ++count;
  std::string clipped_text = ClipToChars(node.text, budget.per_neighbor_char_cap);
  if (clipped_text.size() != node.text.size()) clipped = true;
  std::string s = EscapeNeighborText(clipped_text);
  if (node.children.empty()) return s;

  const std::size_t keep = std::min(node.children.size(), budget.neighbor_cap);
  if (keep < node.children.size()) clipped = true;
  std::vector<std::string> kids;
  kids.reserve(keep);
  for (std::size_t k = 0; k < keep; ++k) {
    kids.push_back(
        RenderTreeNode(node.children[k], tmpl, budget, level + 1, false, clipped, count));
  }
  const std::string& relation =
      level % 2 == 1 ? tmpl.neighbor_relation : tmpl.second_relation;
  s += ", ";
  s += relation;
  s += ' ';
  if (top) {
    s += JoinList(kids, ", ");
  } else {
    s += '(';
    s += JoinList(kids, ", ");
    s += ')';
  }
  return s;
}

bool StartsWith(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

bool EndsWith(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.substr(s.size() - suffix.size()) == suffix;
}

std::vector<std::string> ParseBlock(std::string_view block,
                                    const PromptTemplate& tmpl) {
  std::vector<std::string> segments;
  std::string cur;
  auto flush = [&] {
    std::string_view seg = cur;
    if (!seg.empty() && seg.front() == ' ') seg.remove_prefix(1);
    for (const std::string* rel : {&tmpl.neighbor_relation, &tmpl.second_relation}) {
      if (!rel->empty() && StartsWith(seg, *rel + " ")) {
        seg.remove_prefix(rel->size() + 1);
        break;
      }
    }
    if (CountTokens(seg) > 0) segments.emplace_back(seg);
    cur.clear();
  };
  for (std::size_t k = 0; k < block.size(); ++k) {
    const char c = block[k];
    if (c == '\\') {
      if (k + 1 >= block.size()) throw BackendError("dangling escape in prompt");
      cur += block[++k];
    } else if (IsStructural(c)) {
      flush();
    } else {
      cur += c;
    }
  }
  flush();
  return segments;
}

}  // namespace

std::string_view TaskName(PromptTask task) {
  switch (task) {
    case PromptTask::kJobUser: return "job_user";
    case PromptTask::kJobItem: return "job_item";
    case PromptTask::kSocial: return "social";
  }
  return "unknown";
}

PromptTask ParseTask(std::string_view name) {
  if (name == "job_user") return PromptTask::kJobUser;
  if (name == "job_item") return PromptTask::kJobItem;
  if (name == "social") return PromptTask::kSocial;
  throw ValidationError("unknown prompt task: " + std::string(name));
}

PromptTemplate DefaultTemplate(PromptTask task) {
  PromptTemplate t;
  t.task = task;
  switch (task) {
    case PromptTask::kJobUser:
      t.instruction =
          "Please make appropriate improvements and revisions to the user’s "
          "resume by inferring from his/her resume and his interested job "
          "descriptions to generate a more concise resume.";
      t.target_label = "The user’s resume is: ";
      t.neighbor_label = "The job descriptions that interest the user are: ";
      t.no_neighbors = "No job descriptions are available for this user.";
      t.neighbor_relation = "which interests users with";
      t.second_relation = "who is interested in";
      break;
    case PromptTask::kJobItem:
      t.instruction =
          "Please make appropriate improvements and revisions to the job "
          "description by inferring from the original description and resumes "
          "of users who are interested in the job, generating a more concise "
          "job description.";
      t.target_label = "The original description is: ";
      t.neighbor_label =
          "The resumes of users who are interested in the job are: ";
      t.no_neighbors = "No resumes of interested users are available.";
      t.neighbor_relation = "who is interested in";
      t.second_relation = "which interests users with";
      break;
    case PromptTask::kSocial:
      t.instruction =
          "Please make appropriate improvements and revisions of the user "
          "introduction based on commonalities of his/her self-description and "
          "friends' description.";
      t.target_label = "The user self-description is: ";
      t.neighbor_label = "His/her friends' descriptions are: ";
      t.no_neighbors = "No friend descriptions are available.";
      t.neighbor_relation = "whose friends are";
      t.second_relation = "whose friends are";
      break;
  }
  return t;
}

std::vector<PromptTemplate> DefaultTemplates() {
  return {DefaultTemplate(PromptTask::kJobUser),
          DefaultTemplate(PromptTask::kJobItem),
          DefaultTemplate(PromptTask::kSocial)};
}

TemplateSet ScenarioTemplates(std::string_view scenario,
                              std::span<const PromptTemplate> library) {
  auto find = [&](PromptTask task) {
    for (const auto& t : library) {
      if (t.task == task) return t;
    }
    throw ValidationError("template library has no task " +
                          std::string(TaskName(task)));
  };
  if (scenario == "job") return {find(PromptTask::kJobUser), find(PromptTask::kJobItem)};
  if (scenario == "social") return {find(PromptTask::kSocial), find(PromptTask::kSocial)};
  throw ValidationError("unknown scenario: " + std::string(scenario));
}

std::vector<PromptTemplate> ParseTemplates(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error&) {
    throw ValidationError("malformed prompt template JSON");
  }
  if (!j.is_array()) throw ValidationError("prompt templates must be a JSON array");
  std::vector<PromptTemplate> out;
  for (const auto& rec : j) {
    try {
      PromptTemplate t;
      t.task = ParseTask(rec.at("task").get<std::string>());
      t.instruction = rec.at("instruction").get<std::string>();
      t.target_label = rec.at("target_label").get<std::string>();
      t.neighbor_label = rec.at("neighbor_label").get<std::string>();
      t.no_neighbors = rec.at("no_neighbors").get<std::string>();
      t.neighbor_relation = rec.at("neighbor_relation").get<std::string>();
      t.second_relation = rec.at("second_relation").get<std::string>();
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("prompt template: ") + e.what());
    }
  }
  return out;
}

std::vector<PromptTemplate> LoadTemplates(const std::filesystem::path& path) {
  return ParseTemplates(ReadFile(path));
}

std::string EscapeNeighborText(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (IsStructural(c)) out += '\\';
    out += c;
  }
  return out;
}

std::string UnescapeNeighborText(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t k = 0; k < text.size(); ++k) {
    if (text[k] == '\\' && k + 1 < text.size()) ++k;
    out += text[k];
  }
  return out;
}

std::string ClipToChars(std::string_view text, std::size_t max_chars) {
  if (Utf8Length(text) <= max_chars) return std::string(text);
  std::size_t end = 0;
  for (std::string_view tok : Tokenize(text)) {
    const std::size_t tok_end =
        static_cast<std::size_t>(tok.data() - text.data()) + tok.size();
    if (Utf8Length(text.substr(0, tok_end)) > max_chars) break;
    end = tok_end;
  }
  return std::string(text.substr(0, end));
}

std::string ClipToTokens(std::string_view text, std::size_t max_tokens) {
  const auto tokens = Tokenize(text);
  if (tokens.size() <= max_tokens) return std::string(text);
  if (max_tokens == 0) return {};
  const auto& last = tokens[max_tokens - 1];
  const std::size_t end =
      static_cast<std::size_t>(last.data() - text.data()) + last.size();
  return std::string(text.substr(0, end));
}

RenderedPrompt RenderPrompt(std::string_view target,
                            std::span<const std::string> neighbors,
                            const PromptTemplate& tmpl,
                            const RenderBudget& budget) {
  bool truncated = false;
  const std::size_t keep = std::min(neighbors.size(), budget.neighbor_cap);
  if (keep < neighbors.size()) truncated = true;
  std::vector<std::string> entries;
  entries.reserve(keep);
  for (std::size_t k = 0; k < keep; ++k) {
    std::string clipped = ClipToChars(neighbors[k], budget.per_neighbor_char_cap);
    if (clipped.size() != neighbors[k].size()) truncated = true;
    entries.push_back(EscapeNeighborText(clipped));
  }
  std::vector<std::size_t> sizes(entries.size(), 1);
  return FitToBudget(target, std::move(entries), std::move(sizes), ", ", truncated,
                     tmpl, budget);
}

RenderedPrompt RenderNestedPrompt(std::string_view target,
                                  std::span<const NeighborTree> groups,
                                  const PromptTemplate& tmpl,
                                  const RenderBudget& budget) {
  const bool flat = std::all_of(groups.begin(), groups.end(),
                                [](const auto& g) { return g.children.empty(); });
  if (flat) {
    std::vector<std::string> texts;
    texts.reserve(groups.size());
    for (const auto& g : groups) texts.push_back(g.text);
    return RenderPrompt(target, texts, tmpl, budget);
  }
  bool truncated = false;
  const std::size_t keep = std::min(groups.size(), budget.neighbor_cap);
  if (keep < groups.size()) truncated = true;
  std::vector<std::string> entries;
  std::vector<std::size_t> sizes;
  entries.reserve(keep);
  for (std::size_t k = 0; k < keep; ++k) {
    std::size_t count = 0;
    entries.push_back(
        RenderTreeNode(groups[k], tmpl, budget, 1, true, truncated, count));
    sizes.push_back(count);
  }
  return FitToBudget(target, std::move(entries), std::move(sizes), "]; [",
                     truncated, tmpl, budget);
}

ParsedPrompt ParsePrompt(std::string_view prompt,
                         std::span<const PromptTemplate> library) {
  for (const auto& t : library) {
    const std::string head = t.instruction + " " + t.target_label + "[";
    if (!StartsWith(prompt, head)) continue;
    std::string_view rest = prompt.substr(head.size());
    ParsedPrompt out;
    out.tmpl = &t;

    const std::string marker = "]. " + t.neighbor_label + "[";
    const auto pos = rest.rfind(marker);
    if (pos != std::string_view::npos && EndsWith(rest, "].")) {
      out.target = std::string(rest.substr(0, pos));
      std::string_view block = rest.substr(pos + marker.size());
      block.remove_suffix(2);
      out.neighbors = ParseBlock(block, t);
      return out;
    }
    const std::string empty_tail = "]. " + t.no_neighbors;
    if (EndsWith(rest, empty_tail)) {
      out.target = std::string(rest.substr(0, rest.size() - empty_tail.size()));
      return out;
    }
  }
  throw BackendError("prompt does not match any known template");
}

}  // namespace gcrec
