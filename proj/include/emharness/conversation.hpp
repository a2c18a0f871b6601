#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "emharness/errors.hpp"

namespace emh {

enum class Role { System, User, Assistant };

inline std::string_view to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

inline Role role_from_string(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  throw ConfigError("unknown message role '" + std::string(s) + "'");
}

struct Message {
  Role role = Role::User;
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

/// Ordered chat messages as sent to a chat-completion backend.
struct Conversation {
  std::vector<Message> messages;

  Conversation& add(Role role, std::string content) {
    messages.push_back({role, std::move(content)});
    return *this;
  }

  bool empty() const { return messages.empty(); }

  /// Content of the last user turn, or empty if there is none.
  std::string_view last_user_content() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
      if (it->role == Role::User) return it->content;
    return {};
  }

  friend bool operator==(const Conversation&, const Conversation&) = default;
};

/// Human-readable dump used by golden files: one `### <role>` header per
/// message followed by its content.
inline std::string format_transcript(const Conversation& conv) {
  std::string out;
  for (const auto& m : conv.messages) {
    out += "### ";
    out += to_string(m.role);
    out += '\n';
    out += m.content;
    out += '\n';
  }
  return out;
}

inline nlohmann::json to_json(const Conversation& conv) {
  auto arr = nlohmann::json::array();
  for (const auto& m : conv.messages)
    arr.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
  return arr;
}

inline Conversation conversation_from_json(const nlohmann::json& arr) {
  Conversation conv;
  for (const auto& m : arr)
    conv.add(role_from_string(m.at("role").get<std::string>()),
             m.at("content").get<std::string>());
  return conv;
}

}  // namespace emh
