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

#ifndef GCREC_PROMPT_HPP_
#define GCREC_PROMPT_HPP_

#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gcrec {

enum class PromptTask { kJobUser, kJobItem, kSocial };

std::string_view TaskName(PromptTask task);
PromptTask ParseTask(std::string_view name);

// A rewrite prompt:
//
//   <instruction> <target_label>[<target>]. <neighbor_label>[<n1>, <n2>].
//
// With no neighbors the second sentence becomes <no_neighbors>. Neighbor
// descriptions are backslash-escaped so the structure can be parsed back;
// the target is inserted verbatim.
struct PromptTemplate {
  PromptTask task = PromptTask::kJobUser;
  std::string instruction;
  std::string target_label;
  std::string neighbor_label;
  std::string no_neighbors;
  // Phrases used by nested (multi-hop) prompts: a direct neighbor is followed
  // by `neighbor_relation` and its own neighbors, which are followed by
  // `second_relation`, alternating with depth.
  std::string neighbor_relation;
  std::string second_relation;
};

// The rewrite templates for one scenario: users and items each get one.
struct TemplateSet {
  PromptTemplate user;
  PromptTemplate item;
};

PromptTemplate DefaultTemplate(PromptTask task);
std::vector<PromptTemplate> DefaultTemplates();

// Scenario "job" -> (job_user, job_item); "social" -> (social, social).
TemplateSet ScenarioTemplates(std::string_view scenario,
                              std::span<const PromptTemplate> library);

// JSON array of {task, instruction, target_label, neighbor_label,
// no_neighbors, neighbor_relation, second_relation}.
std::vector<PromptTemplate> LoadTemplates(const std::filesystem::path& path);
std::vector<PromptTemplate> ParseTemplates(const std::string& json_text);

struct RenderBudget {
  std::size_t max_prompt_tokens = 4096;
  std::size_t per_neighbor_char_cap = 2000;
  std::size_t neighbor_cap = std::numeric_limits<std::size_t>::max();
};

struct RenderedPrompt {
  std::string text;
  std::size_t neighbors_used = 0;  // top-level neighbors kept
  std::size_t descriptions = 0;    // neighbor descriptions rendered, all depths
  bool truncated = false;          // any clipping, dropping or target cut
};

// Truncation policy, in order:
//   1. keep the first `neighbor_cap` neighbors (callers pre-order them);
//   2. clip each neighbor to whole tokens within `per_neighbor_char_cap`
//      code points;
//   3. while over `max_prompt_tokens`, drop neighbors from the tail;
//   4. then drop target tokens from the tail.
// Throws ValidationError when not even one target token fits (or, for an
// empty target, when the bare template exceeds the budget).
RenderedPrompt RenderPrompt(std::string_view target,
                            std::span<const std::string> neighbors,
                            const PromptTemplate& tmpl,
                            const RenderBudget& budget);

// A neighbor and, for multi-hop prompts, the neighbors reached through it.
struct NeighborTree {
  std::string text;
  std::vector<NeighborTree> children;
};

// The one-shot multi-hop form used by the PLAIN strategy. Direct neighbors
// without children render exactly like RenderPrompt; otherwise every direct
// neighbor becomes its own bracketed group:
//
//   [<n1>, <relation> <c1>, <c2> (...)]; [<n2>, ...].
//
// Deeper levels nest in parentheses. Budget policy as RenderPrompt, dropping
// whole groups.
RenderedPrompt RenderNestedPrompt(std::string_view target,
                                  std::span<const NeighborTree> groups,
                                  const PromptTemplate& tmpl,
                                  const RenderBudget& budget);

// Structure recovered from a rendered prompt.
struct ParsedPrompt {
  const PromptTemplate* tmpl = nullptr;
  std::string target;
  // Every non-blank neighbor description in render order (depth-first for
  // nested prompts), unescaped.
  std::vector<std::string> neighbors;
};

// Throws BackendError when the prompt does not match any template.
ParsedPrompt ParsePrompt(std::string_view prompt,
                         std::span<const PromptTemplate> library);

// Backslash escaping applied to neighbor descriptions.
std::string EscapeNeighborText(std::string_view text);
std::string UnescapeNeighborText(std::string_view text);

// Keeps whole leading tokens whose byte span has at most `max_chars` code
// points. The kept prefix is byte-identical to the input.
std::string ClipToChars(std::string_view text, std::size_t max_chars);
// First `max_tokens` whitespace tokens, preserving the original bytes between
// them.
std::string ClipToTokens(std::string_view text, std::size_t max_tokens);

}  // namespace gcrec

#endif  // GCREC_PROMPT_HPP_
