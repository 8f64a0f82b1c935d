#include "videostudio/chat.hpp"

#include <cctype>
#include <cstdio>
#include <optional>

#include "httplib.h"
#include "videostudio/rng.hpp"
#include "videostudio/tensor_io.hpp"

namespace vs {

namespace {

std::string trimmed(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

const std::string kSystemInstruction =
    "You are a film director. You need to envision a multi-scene video and describe each scene in detail. "
    "For each scene write one line in exactly this form:\n"
    "[Scene <i>: prompt: <what happens> | foreground: <entity>, <entity> | background: <entity> | "
    "camera: <direction>, <speed>]\n"
    "Number scenes from 1 without gaps. List at most four foreground entities and exactly one background entity. "
    "Use the same name for the same entity in every scene. "
    "Direction is one of static, left, right, up, down, forward, backward. Speed is one of slow, medium, fast. "
    "Write nothing except the scene lines.";

}  // namespace

std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

bool well_formed(const DialogueTranscript& t) {
  if (t.empty() || t.front().role != Role::System) return false;
  for (std::size_t i = 1; i < t.size(); ++i) {
    const Role want = (i % 2 == 1) ? Role::User : Role::Assistant;
    if (t[i].role != want) return false;
  }
  return true;
}

nlohmann::json chat_request(const std::string& model, const std::vector<ChatMessage>& messages) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return {{"model", model}, {"messages", std::move(msgs)}};
}

std::string chat_response_content(const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("unexpected chat response: ") + e.what());
  }
}

std::string request_hash(const std::string& model, const std::vector<ChatMessage>& messages) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(chat_request(model, messages).dump())));
  return buf;
}

MockChatBackend::MockChatBackend(nlohmann::json fixture) : fixture_(std::move(fixture)) {
  if (!fixture_.is_object()) throw BackendError("mock fixture must be a JSON object");
  model_ = fixture_.value("model", std::string("mock"));
}

nlohmann::json MockChatBackend::load_fixture(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw BackendError("bad mock fixture " + path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw BackendError(e.what());
  }
}

std::string MockChatBackend::next(const std::string& key, const nlohmann::json& entry) {
  if (entry.is_string()) return entry.get<std::string>();
  if (!entry.is_array() || entry.empty()) throw BackendError("mock entry '" + key + "' has no responses");
  std::size_t& cursor = cursors_[key];
  const std::size_t i = std::min(cursor, entry.size() - 1);
  ++cursor;
  return entry.at(i).get<std::string>();
}

std::string MockChatBackend::complete(const std::vector<ChatMessage>& messages) {
  std::lock_guard lock(mu_);
  requests_.push_back(messages);
  const std::string hash = request_hash(model_, messages);
  if (auto r = fixture_.find("responses"); r != fixture_.end() && r->contains(hash)) {
    return next(hash, r->at(hash));
  }
  std::string last_user;
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::User) {
      last_user = it->content;
      break;
    }
  }
  if (auto rules = fixture_.find("rules"); rules != fixture_.end()) {
    for (std::size_t i = 0; i < rules->size(); ++i) {
      const auto& rule = rules->at(i);
      if (last_user.find(rule.at("contains").get<std::string>()) != std::string::npos) {
        return next("rule#" + std::to_string(i), rule.at("responses"));
      }
    }
  }
  if (auto d = fixture_.find("default"); d != fixture_.end()) return next("default", *d);
  throw BackendError("mock has no response for request " + hash);
}

std::size_t MockChatBackend::calls() const {
  std::lock_guard lock(mu_);
  return requests_.size();
}

HttpChatBackend::HttpChatBackend(std::string url, std::string model, std::string api_key, int timeout_seconds)
    : url_(std::move(url)), model_(std::move(model)), api_key_(std::move(api_key)), timeout_seconds_(timeout_seconds) {}

std::string HttpChatBackend::complete(const std::vector<ChatMessage>& messages) {
  const auto scheme_end = url_.find("://");
  const auto path_start = url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = path_start == std::string::npos ? url_ : url_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url_.substr(path_start);

  httplib::Client client(origin);
  client.set_read_timeout(timeout_seconds_, 0);
  client.set_connection_timeout(10, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(path, headers, chat_request(model_, messages).dump(), "application/json");
  if (!res) throw BackendError("chat request to " + url_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw BackendError("chat backend returned HTTP " + std::to_string(res->status));
  return chat_response_content(res->body);
}

const std::string& script_system_instruction() { return kSystemInstruction; }

std::string script_user_message(const std::string& prompt) {
  return "Input prompt: " + prompt + "\nWrite the multi-scene video script.";
}

DialogueTranscript load_script_examples(const std::filesystem::path& path) {
  DialogueTranscript out;
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    for (const auto& e : j.at("examples")) {
      out.push_back({Role::User, script_user_message(e.at("prompt").get<std::string>())});
      out.push_back({Role::Assistant, e.at("script").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ScriptError(ScriptError::Kind::WrongExampleCount, "bad example file " + path.string() + ": " + e.what());
  }
  return out;
}

std::vector<ChatMessage> build_script_query(const std::string& prompt, const DialogueTranscript& examples) {
  if (trimmed(prompt).empty()) throw ScriptError(ScriptError::Kind::EmptyPrompt, "prompt is empty");
  bool paired = examples.size() % 2 == 0;
  for (std::size_t i = 0; paired && i < examples.size(); ++i)
    paired = examples[i].role == (i % 2 == 0 ? Role::User : Role::Assistant);
  if (!paired || examples.size() != 10) {
    throw ScriptError(ScriptError::Kind::WrongExampleCount,
                      "expected 5 user/assistant example pairs, got " + std::to_string(examples.size()) + " messages");
  }
  std::vector<ChatMessage> out;
  out.reserve(12);
  out.push_back({Role::System, kSystemInstruction});
  out.insert(out.end(), examples.begin(), examples.end());
  out.push_back({Role::User, script_user_message(prompt)});
  return out;
}

ScriptGeneration generate_script(const std::string& prompt, ChatBackend& backend, const RetryPolicy& policy,
                                 const DialogueTranscript& examples, const ScriptLimits& limits) {
  if (policy.max_attempts < 1) throw std::invalid_argument("max_attempts must be at least 1");
  const auto query = build_script_query(prompt, examples);
  ScriptGeneration result;
  std::optional<VideoScript> last_parsed;
  std::string last_problem;
  for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
    DialogueTranscript transcript = query;
    const std::string reply = backend.complete(query);
    transcript.push_back({Role::Assistant, reply});
    result.transcripts.push_back(std::move(transcript));
    result.attempts = attempt;
    try {
      VideoScript script = parse_script(reply);
      script.source_prompt = prompt;
      const auto violations = validate_script(script, limits);
      if (violations.empty()) {
        result.script = std::move(script);
        return result;
      }
      last_problem = std::string(to_string(violations.front().kind)) + ": " + violations.front().detail;
      last_parsed = std::move(script);
    } catch (const ScriptError& e) {
      last_problem = e.what();
    }
  }
  if (policy.on_exhaustion == RetryPolicy::OnExhaustion::BestEffortLast && last_parsed) {
    result.script = std::move(*last_parsed);
    result.clean = false;
    return result;
  }
  throw ScriptGenerationExhausted("no valid script after " + std::to_string(policy.max_attempts) +
                                      " attempts; last problem: " + last_problem,
                                  std::move(result.transcripts));
}

std::string description_aspects_question(const EntityRecord& entity) {
  if (entity.kind == EntityKind::Background) {
    return "What are the aspects that should be considered when describing a photo of the scene \"" + entity.name +
           "\" in detail?";
  }
  return "What are the aspects that should be considered when describing a photo of \"" + entity.name +
         "\" in detail?";
}

std::string description_request(const EntityRecord& entity, const std::string& source_prompt) {
  return "The original prompt is: \"" + source_prompt + "\". Using the aspects above, describe \"" + entity.name +
         "\" in one detailed paragraph. Keep every essential characteristic the original prompt gives it.";
}

std::string generate_entity_description(const EntityRecord& entity, const std::string& source_prompt,
                                        ChatBackend& backend, DialogueTranscript* transcript) {
  DialogueTranscript t{{Role::System, "You are an expert at writing detailed visual descriptions for photographs."},
                       {Role::User, description_aspects_question(entity)}};
  t.push_back({Role::Assistant, backend.complete(t)});
  t.push_back({Role::User, description_request(entity, source_prompt)});
  const std::string reply = trimmed(backend.complete(t));
  t.push_back({Role::Assistant, reply});
  if (transcript) *transcript = t;
  if (reply.empty()) throw EmptyDescription("empty description for '" + entity.name + "'");
  return reply;
}

}  // namespace vs
