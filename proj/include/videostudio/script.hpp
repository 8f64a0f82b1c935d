#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vs {

enum class CameraDirection : std::uint8_t { Static, Left, Right, Up, Down, Forward, Backward };
enum class CameraSpeed : std::uint8_t { Slow, Medium, Fast };

struct CameraMove {
  CameraDirection direction = CameraDirection::Static;
  CameraSpeed speed = CameraSpeed::Slow;
  bool operator==(const CameraMove&) const = default;
};

std::string_view to_string(CameraDirection d);
std::string_view to_string(CameraSpeed s);
std::optional<CameraDirection> parse_direction(std::string_view token);
std::optional<CameraSpeed> parse_speed(std::string_view token);
bool is_valid(CameraDirection d);
bool is_valid(CameraSpeed s);
// "right,medium" / "right, medium"
CameraMove parse_camera_move(std::string_view text);

struct SceneSpec {
  int index = 1;
  std::string prompt;
  std::vector<std::string> foreground;
  std::string background;
  CameraMove camera;
  bool operator==(const SceneSpec&) const = default;
};

struct VideoScript {
  std::string source_prompt;
  std::vector<SceneSpec> scenes;
  bool operator==(const VideoScript&) const = default;
};

enum class EntityKind : std::uint8_t { Foreground, Background };

struct EntityRecord {
  std::string name;
  EntityKind kind = EntityKind::Foreground;
  std::set<int> occurrences;
  std::optional<std::string> description;

  bool common() const { return occurrences.size() >= 2; }
  bool operator==(const EntityRecord&) const = default;
};

// Script-level failures. `kind` names the condition for callers that branch.
struct ScriptError : public std::runtime_error {
  enum class Kind { MalformedScene, UnknownCameraToken, NonContiguousIndices, EmptyScript, WrongExampleCount, EmptyPrompt };
  Kind kind;
  std::size_t position = 0;  // byte offset into the parsed text, when applicable
  ScriptError(Kind k, const std::string& what, std::size_t pos = 0)
      : std::runtime_error(what), kind(k), position(pos) {}
};

struct ScriptLimits {
  std::size_t max_scenes = 12;
  std::size_t max_foreground = 4;
};

enum class ViolationKind {
  NoScenes,
  TooManyScenes,
  NonContiguousIndices,
  UnknownCameraToken,
  EmptyPrompt,
  EmptyEntityName,
  UnnormalizedEntityName,
  TooManyForegrounds,
  ReservedCharacter,
  KindConflict,
};

std::string_view to_string(ViolationKind v);

struct Violation {
  ViolationKind kind;
  int scene_index = 0;  // 0 when script-level
  std::string detail;
};

// Trim, collapse internal whitespace runs to one space, lowercase.
std::string normalize_entity_name(std::string_view name);

// Grammar, one record per scene:
//   [Scene <i>: prompt: <text> | foreground: <a>, <b> | background: <c> | camera: <dir>, <speed>]
// Records may be separated by whitespace or ';'. Field labels are
// case-insensitive and may come in any order; each must appear once.
VideoScript parse_script(std::string_view text);
std::string serialize_script(const VideoScript& script);
std::vector<Violation> validate_script(const VideoScript& script, const ScriptLimits& limits = {});

// One record per unique normalized name, sorted by name.
std::vector<EntityRecord> find_common_entities(const VideoScript& script);

}  // namespace vs
