#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cfcrs/flow.hpp"
#include "cfcrs/kg_store.hpp"

namespace cfcrs {

// Byte offsets into the UTF-8 turn text, half-open [start, end).
struct Mention {
  std::string entity;
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const Mention&) const = default;
};

struct Turn {
  Speaker speaker = Speaker::kSeeker;
  std::string text;
  std::vector<Mention> mentions;
  bool operator==(const Turn&) const = default;
};

struct Dialogue {
  std::string dialogue_id;
  std::vector<Turn> turns;
  // Optional global participant ids; absent in most corpora.
  std::optional<std::string> seeker_id;
  std::optional<std::string> recommender_id;
  bool operator==(const Dialogue&) const = default;
};

// Throws SpanOutOfBounds for spans past the text, overlapping, or out of
// order, and ParseError for an empty turn list.
void validate_dialogue(const Dialogue& d);

// JSON Lines, one dialogue per line:
//   {"dialogue_id": str, "turns": [{"speaker": "seeker"|"recommender",
//    "text": str, "mentions": [{"entity": str, "start": int, "end": int}]}]}
// Blank lines are skipped; record indices in errors are 0-based over
// non-blank lines.
std::vector<Dialogue> load_dialogues(std::istream& in);
Dialogue parse_dialogue(std::string_view line, std::size_t record_index);
std::string to_json_line(const Dialogue& d);
void write_dialogues(std::ostream& out, std::span<const Dialogue> dialogues);

struct FlowAndSchema {
  ConversationFlow flow;
  FlowSchema schema;
};

// Every mention in occurrence order, duplicates kept. Throws UnknownEntity.
FlowAndSchema extract_flow(const Dialogue& d, const KnowledgeGraph& kg);

// Delexicalized turn. literals has one more element than slots; the text is
// literals[0] slot[0] literals[1] ... with each slot rendered `<type-name>`.
struct Template {
  Speaker speaker = Speaker::kSeeker;
  std::string text;
  std::vector<std::string> literals;
  std::vector<TypeId> slots;
  std::string source_dialogue;
  bool operator==(const Template&) const = default;
};

// One template per turn; mention-free turns give empty-signature templates.
std::vector<Template> extract_templates(const Dialogue& d, const KnowledgeGraph& kg);

// Substitutes `surfaces` into the slots and returns the turn with mention
// spans over the substituted text. `entities` names the mentions.
Turn fill_template(const Template& t, std::span<const std::string> surfaces,
                   std::span<const std::string> entities);

std::string user_id(const Dialogue& d, Speaker role);

// Entities each user mentioned, deduplicated, first-occurrence order, users
// in order of first appearance. Users without mentions are omitted.
// Throws UnknownEntity.
std::vector<UserInteractions> derive_interactions(std::span<const Dialogue> dialogues,
                                                  const KnowledgeGraph& kg);

}  // namespace cfcrs
