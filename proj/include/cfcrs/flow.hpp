#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cfcrs {

using EntityId = std::int32_t;
using TypeId = std::int32_t;
using RelationId = std::int32_t;

enum class Speaker : std::uint8_t { kSeeker, kRecommender };

std::string_view to_string(Speaker s);

// Type-token sequence parallel to a conversation flow.
struct FlowSchema {
  std::vector<TypeId> types;

  std::size_t size() const { return types.size(); }
  bool empty() const { return types.empty(); }
  auto operator<=>(const FlowSchema&) const = default;
};

// Entities in mention order. turn_index and speakers are either empty (flow
// not yet realized into turns) or parallel to entities.
struct ConversationFlow {
  std::vector<EntityId> entities;
  std::vector<std::size_t> turn_index;
  std::vector<Speaker> speakers;

  std::size_t size() const { return entities.size(); }
  bool empty() const { return entities.empty(); }
  static ConversationFlow of(std::vector<EntityId> entities) {
    return ConversationFlow{std::move(entities), {}, {}};
  }
};

}  // namespace cfcrs
