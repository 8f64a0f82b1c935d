#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "videostudio/script.hpp"

namespace vs {

enum class Role { System, User, Assistant };

std::string_view to_string(Role r);

struct ChatMessage {
  Role role = Role::User;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

using DialogueTranscript = std::vector<ChatMessage>;

// First message system, then strict user/assistant alternation.
bool well_formed(const DialogueTranscript& t);

struct BackendError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyDescription : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Returns the assistant reply to the conversation so far. Throws BackendError.
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

nlohmann::json chat_request(const std::string& model, const std::vector<ChatMessage>& messages);
std::string chat_response_content(const std::string& body);
// FNV-1a of the compact request JSON, 16 hex digits.
std::string request_hash(const std::string& model, const std::vector<ChatMessage>& messages);

// Fixture layout:
//   {"model": "...",
//    "responses": {"<request hash>": "text" | ["first", "second", ...]},
//    "rules": [{"contains": "substring of the last user message", "responses": "text" | [...]}],
//    "default": "text"}
// A list is consumed one entry per call; its last entry repeats.
class MockChatBackend : public ChatBackend {
 public:
  explicit MockChatBackend(nlohmann::json fixture);
  static nlohmann::json load_fixture(const std::filesystem::path& path);

  std::string complete(const std::vector<ChatMessage>& messages) override;
  std::size_t calls() const;
  const std::vector<std::vector<ChatMessage>>& requests() const { return requests_; }

 private:
  std::string next(const std::string& key, const nlohmann::json& entry);

  nlohmann::json fixture_;
  std::string model_;
  std::map<std::string, std::size_t> cursors_;
  std::vector<std::vector<ChatMessage>> requests_;
  mutable std::mutex mu_;
};

class HttpChatBackend : public ChatBackend {
 public:
  // url like "http://host:port/v1/chat/completions"
  HttpChatBackend(std::string url, std::string model, std::string api_key = {}, int timeout_seconds = 120);
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  std::string url_, model_, api_key_;
  int timeout_seconds_;
};

// Reads [{"prompt": ..., "script": ...}] and expands each pair into a user/assistant exchange.
DialogueTranscript load_script_examples(const std::filesystem::path& path);
std::string script_user_message(const std::string& prompt);
const std::string& script_system_instruction();

std::vector<ChatMessage> build_script_query(const std::string& prompt, const DialogueTranscript& examples);

struct RetryPolicy {
  enum class OnExhaustion { Error, BestEffortLast };
  int max_attempts = 3;
  OnExhaustion on_exhaustion = OnExhaustion::Error;
};

struct ScriptGenerationExhausted : public std::runtime_error {
  std::vector<DialogueTranscript> transcripts;
  ScriptGenerationExhausted(const std::string& what, std::vector<DialogueTranscript> t)
      : std::runtime_error(what), transcripts(std::move(t)) {}
};

struct ScriptGeneration {
  VideoScript script;
  int attempts = 0;
  bool clean = true;  // false only for a best-effort return with violations
  std::vector<DialogueTranscript> transcripts;
};

ScriptGeneration generate_script(const std::string& prompt, ChatBackend& backend, const RetryPolicy& policy,
                                 const DialogueTranscript& examples, const ScriptLimits& limits = {});

std::string description_aspects_question(const EntityRecord& entity);
std::string description_request(const EntityRecord& entity, const std::string& source_prompt);

// Two rounds: aspects to consider, then a description grounded in those
// aspects and the source prompt. Returns the round-two reply, trimmed.
std::string generate_entity_description(const EntityRecord& entity, const std::string& source_prompt,
                                        ChatBackend& backend, DialogueTranscript* transcript = nullptr);

}  // namespace vs
