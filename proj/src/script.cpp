#include "videostudio/script.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <map>

namespace vs {

namespace {

constexpr std::array<std::string_view, 7> kDirections = {"static", "left", "right", "up", "down", "forward", "backward"};
constexpr std::array<std::string_view, 3> kSpeeds = {"slow", "medium", "fast"};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string collapse(std::string_view s) {
  std::string out;
  bool gap = false;
  for (char c : trim(s)) {
    if (is_space(c)) {
      gap = true;
      continue;
    }
    if (gap) out.push_back(' ');
    gap = false;
    out.push_back(c);
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

[[noreturn]] void malformed(std::size_t pos, const std::string& msg) {
  throw ScriptError(ScriptError::Kind::MalformedScene, "malformed scene at offset " + std::to_string(pos) + ": " + msg,
                    pos);
}

// Splits on `sep`, returning each piece with its offset relative to `base`.
std::vector<std::pair<std::string_view, std::size_t>> split(std::string_view s, char sep, std::size_t base) {
  std::vector<std::pair<std::string_view, std::size_t>> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start), base + start);
      start = i + 1;
    }
  }
  return out;
}

CameraMove camera_at(std::string_view text, std::size_t pos) {
  auto parts = split(text, ',', pos);
  if (parts.size() != 2) malformed(pos, "camera expects '<direction>, <speed>'");
  const std::string dir = lower(trim(parts[0].first));
  const std::string speed = lower(trim(parts[1].first));
  auto d = parse_direction(dir);
  if (!d) throw ScriptError(ScriptError::Kind::UnknownCameraToken, "unknown camera direction '" + dir + "'", parts[0].second);
  auto s = parse_speed(speed);
  if (!s) throw ScriptError(ScriptError::Kind::UnknownCameraToken, "unknown camera speed '" + speed + "'", parts[1].second);
  return {*d, *s};
}

SceneSpec parse_record(std::string_view body, std::size_t pos) {
  // body is the text between '[' and ']'
  const std::size_t colon = body.find(':');
  if (colon == std::string_view::npos) malformed(pos, "missing 'Scene <i>:' header");
  const std::string header = collapse(body.substr(0, colon));
  if (header.size() < 7 || lower(header.substr(0, 6)) != "scene ") malformed(pos, "header must read 'Scene <i>'");
  const std::string num = header.substr(6);
  int index = 0;
  auto [end, ec] = std::from_chars(num.data(), num.data() + num.size(), index);
  if (ec != std::errc{} || end != num.data() + num.size() || index <= 0) malformed(pos, "bad scene index '" + num + "'");

  SceneSpec scene;
  scene.index = index;
  std::map<std::string, std::pair<std::string_view, std::size_t>> fields;
  for (auto [field, fpos] : split(body.substr(colon + 1), '|', pos + colon + 1)) {
    const std::size_t c = field.find(':');
    if (c == std::string_view::npos) malformed(fpos, "field without label");
    const std::string label = lower(trim(field.substr(0, c)));
    if (label != "prompt" && label != "foreground" && label != "background" && label != "camera")
      malformed(fpos, "unknown field '" + label + "'");
    if (!fields.emplace(label, std::pair{field.substr(c + 1), fpos + c + 1}).second)
      malformed(fpos, "duplicate field '" + label + "'");
  }
  for (const char* label : {"prompt", "foreground", "background", "camera"}) {
    if (!fields.contains(label)) malformed(pos, std::string("missing field '") + label + "'");
  }

  scene.prompt = collapse(fields["prompt"].first);
  if (scene.prompt.empty()) malformed(fields["prompt"].second, "empty prompt");
  const auto [fg, fg_pos] = fields["foreground"];
  if (!trim(fg).empty()) {
    for (auto [name, npos] : split(fg, ',', fg_pos)) {
      std::string n = normalize_entity_name(name);
      if (n.empty()) malformed(npos, "empty foreground name");
      scene.foreground.push_back(std::move(n));
    }
  }
  scene.background = normalize_entity_name(fields["background"].first);
  if (scene.background.empty()) malformed(fields["background"].second, "empty background name");
  scene.camera = camera_at(fields["camera"].first, fields["camera"].second);
  return scene;
}

bool has_reserved(std::string_view s, bool is_name) {
  for (char c : s) {
    if (c == '[' || c == ']' || c == '|' || c == '\n' || c == '\r') return true;
    if (is_name && c == ',') return true;
  }
  return false;
}

}  // namespace

std::string_view to_string(CameraDirection d) {
  if (!is_valid(d)) return "invalid";
  return kDirections[static_cast<std::size_t>(d)];
}

std::string_view to_string(CameraSpeed s) {
  if (!is_valid(s)) return "invalid";
  return kSpeeds[static_cast<std::size_t>(s)];
}

std::optional<CameraDirection> parse_direction(std::string_view token) {
  for (std::size_t i = 0; i < kDirections.size(); ++i)
    if (kDirections[i] == token) return static_cast<CameraDirection>(i);
  return std::nullopt;
}

std::optional<CameraSpeed> parse_speed(std::string_view token) {
  for (std::size_t i = 0; i < kSpeeds.size(); ++i)
    if (kSpeeds[i] == token) return static_cast<CameraSpeed>(i);
  return std::nullopt;
}

bool is_valid(CameraDirection d) { return static_cast<std::size_t>(d) < kDirections.size(); }
bool is_valid(CameraSpeed s) { return static_cast<std::size_t>(s) < kSpeeds.size(); }

CameraMove parse_camera_move(std::string_view text) { return camera_at(text, 0); }

std::string_view to_string(ViolationKind v) {
  switch (v) {
    case ViolationKind::NoScenes: return "NoScenes";
    case ViolationKind::TooManyScenes: return "TooManyScenes";
    case ViolationKind::NonContiguousIndices: return "NonContiguousIndices";
    case ViolationKind::UnknownCameraToken: return "UnknownCameraToken";
    case ViolationKind::EmptyPrompt: return "EmptyPrompt";
    case ViolationKind::EmptyEntityName: return "EmptyEntityName";
    case ViolationKind::UnnormalizedEntityName: return "UnnormalizedEntityName";
    case ViolationKind::TooManyForegrounds: return "TooManyForegrounds";
    case ViolationKind::ReservedCharacter: return "ReservedCharacter";
    case ViolationKind::KindConflict: return "KindConflict";
  }
  return "Unknown";
}

std::string normalize_entity_name(std::string_view name) { return lower(collapse(name)); }

VideoScript parse_script(std::string_view text) {
  if (trim(text).empty()) throw ScriptError(ScriptError::Kind::EmptyScript, "script text is empty");
  VideoScript script;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (is_space(c) || c == ';') {
      ++i;
      continue;
    }
    if (c != '[') malformed(i, "expected '[' to open a scene record");
    const std::size_t close = text.find(']', i + 1);
    const std::size_t reopen = text.find('[', i + 1);
    if (close == std::string_view::npos || (reopen != std::string_view::npos && reopen < close))
      malformed(i, "unterminated scene record");
    script.scenes.push_back(parse_record(text.substr(i + 1, close - i - 1), i + 1));
    i = close + 1;
  }
  for (std::size_t k = 0; k < script.scenes.size(); ++k) {
    if (script.scenes[k].index != static_cast<int>(k + 1)) {
      throw ScriptError(ScriptError::Kind::NonContiguousIndices,
                        "scene " + std::to_string(k + 1) + " is labelled " + std::to_string(script.scenes[k].index));
    }
  }
  return script;
}

std::string serialize_script(const VideoScript& script) {
  std::string out;
  for (const auto& s : script.scenes) {
    out += "[Scene " + std::to_string(s.index) + ": prompt: " + s.prompt + " | foreground:";
    for (std::size_t i = 0; i < s.foreground.size(); ++i) out += (i == 0 ? " " : ", ") + s.foreground[i];
    out += " | background: " + s.background + " | camera: ";
    out += std::string(to_string(s.camera.direction)) + ", " + std::string(to_string(s.camera.speed)) + "]\n";
  }
  return out;
}

std::vector<Violation> validate_script(const VideoScript& script, const ScriptLimits& limits) {
  std::vector<Violation> out;
  if (script.scenes.empty()) out.push_back({ViolationKind::NoScenes, 0, "script has no scenes"});
  if (script.scenes.size() > limits.max_scenes)
    out.push_back({ViolationKind::TooManyScenes, 0,
                   std::to_string(script.scenes.size()) + " scenes exceed " + std::to_string(limits.max_scenes)});

  std::map<std::string, EntityKind> kinds;
  for (std::size_t k = 0; k < script.scenes.size(); ++k) {
    const auto& s = script.scenes[k];
    if (s.index != static_cast<int>(k + 1))
      out.push_back({ViolationKind::NonContiguousIndices, s.index,
                     "position " + std::to_string(k + 1) + " carries index " + std::to_string(s.index)});
    if (!is_valid(s.camera.direction) || !is_valid(s.camera.speed))
      out.push_back({ViolationKind::UnknownCameraToken, s.index, "camera outside the closed token set"});
    if (trim(s.prompt).empty()) out.push_back({ViolationKind::EmptyPrompt, s.index, "empty prompt"});
    if (has_reserved(s.prompt, false))
      out.push_back({ViolationKind::ReservedCharacter, s.index, "prompt contains a grammar delimiter"});
    if (s.foreground.size() > limits.max_foreground)
      out.push_back({ViolationKind::TooManyForegrounds, s.index,
                     std::to_string(s.foreground.size()) + " foregrounds exceed " +
                         std::to_string(limits.max_foreground)});

    auto check_name = [&](const std::string& name, EntityKind kind) {
      if (trim(name).empty()) {
        out.push_back({ViolationKind::EmptyEntityName, s.index, "empty entity name"});
        return;
      }
      if (normalize_entity_name(name) != name)
        out.push_back({ViolationKind::UnnormalizedEntityName, s.index, "'" + name + "' is not normalized"});
      if (has_reserved(name, true))
        out.push_back({ViolationKind::ReservedCharacter, s.index, "'" + name + "' contains a grammar delimiter"});
      auto [it, fresh] = kinds.emplace(name, kind);
      if (!fresh && it->second != kind)
        out.push_back({ViolationKind::KindConflict, s.index, "'" + name + "' is both foreground and background"});
    };
    for (const auto& n : s.foreground) check_name(n, EntityKind::Foreground);
    check_name(s.background, EntityKind::Background);
  }
  return out;
}

std::vector<EntityRecord> find_common_entities(const VideoScript& script) {
  std::map<std::string, EntityRecord> records;
  auto add = [&](const std::string& raw, EntityKind kind, int scene) {
    const std::string name = normalize_entity_name(raw);
    auto [it, fresh] = records.try_emplace(name);
    if (fresh) {
      it->second.name = name;
      it->second.kind = kind;
    } else if (kind == EntityKind::Foreground) {
      it->second.kind = EntityKind::Foreground;
    }
    it->second.occurrences.insert(scene);
  };
  for (const auto& s : script.scenes) {
    for (const auto& n : s.foreground) add(n, EntityKind::Foreground, s.index);
    add(s.background, EntityKind::Background, s.index);
  }
  std::vector<EntityRecord> out;
  out.reserve(records.size());
  for (auto& [_, r] : records) out.push_back(std::move(r));
  return out;
}

}  // namespace vs
