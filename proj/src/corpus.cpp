#include "cfcrs/corpus.hpp"

#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "cfcrs/error.hpp"

namespace cfcrs {

using ojson = nlohmann::ordered_json;

void validate_dialogue(const Dialogue& d) {
  if (d.turns.empty()) throw Error(ErrorCode::kParseError, d.dialogue_id + ": no turns");
  for (std::size_t t = 0; t < d.turns.size(); ++t) {
    const Turn& turn = d.turns[t];
    std::size_t prev_end = 0;
    for (const Mention& m : turn.mentions) {
      if (m.start >= m.end || m.end > turn.text.size() || m.start < prev_end) {
        throw Error(ErrorCode::kSpanOutOfBounds,
                    "dialogue " + d.dialogue_id + " turn " + std::to_string(t));
      }
      prev_end = m.end;
    }
  }
}

Dialogue parse_dialogue(std::string_view line, std::size_t record_index) {
  const std::string where = "record " + std::to_string(record_index);
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const ojson::parse_error& e) {
    throw Error(ErrorCode::kParseError, where + ": " + e.what());
  }
  Dialogue d;
  try {
    d.dialogue_id = j.at("dialogue_id").get<std::string>();
    if (j.contains("seeker_id")) d.seeker_id = j["seeker_id"].get<std::string>();
    if (j.contains("recommender_id")) d.recommender_id = j["recommender_id"].get<std::string>();
    for (const auto& jt : j.at("turns")) {
      Turn turn;
      const std::string sp = jt.at("speaker").get<std::string>();
      if (sp == "seeker") {
        turn.speaker = Speaker::kSeeker;
      } else if (sp == "recommender") {
        turn.speaker = Speaker::kRecommender;
      } else {
        throw Error(ErrorCode::kParseError, where + ": unknown speaker " + sp);
      }
      turn.text = jt.at("text").get<std::string>();
      if (jt.contains("mentions")) {
        for (const auto& jm : jt.at("mentions")) {
          const auto start = jm.at("start").get<std::int64_t>();
          const auto end = jm.at("end").get<std::int64_t>();
          if (start < 0 || end < 0) {
            throw Error(ErrorCode::kSpanOutOfBounds,
                        "dialogue " + d.dialogue_id + " turn " +
                            std::to_string(d.turns.size()));
          }
          turn.mentions.push_back(Mention{jm.at("entity").get<std::string>(),
                                          static_cast<std::size_t>(start),
                                          static_cast<std::size_t>(end)});
        }
      }
      d.turns.push_back(std::move(turn));
    }
  } catch (const ojson::exception& e) {
    throw Error(ErrorCode::kParseError, where + ": " + e.what());
  }
  if (d.turns.empty()) throw Error(ErrorCode::kParseError, where + ": no turns");
  validate_dialogue(d);
  return d;
}

std::vector<Dialogue> load_dialogues(std::istream& in) {
  std::vector<Dialogue> out;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_dialogue(line, index++));
  }
  return out;
}

std::string to_json_line(const Dialogue& d) {
  ojson j;
  j["dialogue_id"] = d.dialogue_id;
  if (d.seeker_id) j["seeker_id"] = *d.seeker_id;
  if (d.recommender_id) j["recommender_id"] = *d.recommender_id;
  j["turns"] = ojson::array();
  for (const Turn& t : d.turns) {
    ojson jt;
    jt["speaker"] = std::string(to_string(t.speaker));
    jt["text"] = t.text;
    jt["mentions"] = ojson::array();
    for (const Mention& m : t.mentions) {
      jt["mentions"].push_back({{"entity", m.entity}, {"start", m.start}, {"end", m.end}});
    }
    j["turns"].push_back(std::move(jt));
  }
  return j.dump();
}

void write_dialogues(std::ostream& out, std::span<const Dialogue> dialogues) {
  for (const Dialogue& d : dialogues) out << to_json_line(d) << '\n';
}

FlowAndSchema extract_flow(const Dialogue& d, const KnowledgeGraph& kg) {
  FlowAndSchema out;
  for (std::size_t t = 0; t < d.turns.size(); ++t) {
    for (const Mention& m : d.turns[t].mentions) {
      const EntityId e = kg.entity_id(m.entity);
      out.flow.entities.push_back(e);
      out.flow.turn_index.push_back(t);
      out.flow.speakers.push_back(d.turns[t].speaker);
      out.schema.types.push_back(kg.type_of(e));
    }
  }
  return out;
}

std::vector<Template> extract_templates(const Dialogue& d, const KnowledgeGraph& kg) {
  std::vector<Template> out;
  out.reserve(d.turns.size());
  for (const Turn& turn : d.turns) {
    Template t;
    t.speaker = turn.speaker;
    t.source_dialogue = d.dialogue_id;
    std::size_t cursor = 0;
    for (const Mention& m : turn.mentions) {
      const TypeId type = kg.type_of(kg.entity_id(m.entity));
      t.literals.push_back(turn.text.substr(cursor, m.start - cursor));
      t.slots.push_back(type);
      t.text += t.literals.back();
      t.text += "<" + kg.type_name(type) + ">";
      cursor = m.end;
    }
    t.literals.push_back(turn.text.substr(cursor));
    t.text += t.literals.back();
    out.push_back(std::move(t));
  }
  return out;
}

Turn fill_template(const Template& t, std::span<const std::string> surfaces,
                   std::span<const std::string> entities) {
  if (surfaces.size() != t.slots.size() || entities.size() != t.slots.size()) {
    throw Error(ErrorCode::kShapeMismatch, "template expects " +
                                               std::to_string(t.slots.size()) + " fillers");
  }
  Turn turn;
  turn.speaker = t.speaker;
  for (std::size_t i = 0; i < t.slots.size(); ++i) {
    turn.text += t.literals[i];
    const std::size_t start = turn.text.size();
    turn.text += surfaces[i];
    turn.mentions.push_back(Mention{entities[i], start, turn.text.size()});
  }
  turn.text += t.literals.back();
  return turn;
}

std::string user_id(const Dialogue& d, Speaker role) {
  if (role == Speaker::kSeeker && d.seeker_id) return *d.seeker_id;
  if (role == Speaker::kRecommender && d.recommender_id) return *d.recommender_id;
  return d.dialogue_id + "#" + std::string(to_string(role));
}

std::vector<UserInteractions> derive_interactions(std::span<const Dialogue> dialogues,
                                                  const KnowledgeGraph& kg) {
  std::vector<UserInteractions> out;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::unordered_set<EntityId>> seen;
  for (const Dialogue& d : dialogues) {
    for (const Turn& turn : d.turns) {
      if (turn.mentions.empty()) continue;
      const std::string uid = user_id(d, turn.speaker);
      auto [it, inserted] = index.emplace(uid, out.size());
      if (inserted) {
        out.push_back(UserInteractions{uid, {}});
        seen.emplace_back();
      }
      for (const Mention& m : turn.mentions) {
        const EntityId e = kg.entity_id(m.entity);
        if (seen[it->second].insert(e).second) out[it->second].entities.push_back(e);
      }
    }
  }
  return out;
}

}  // namespace cfcrs
