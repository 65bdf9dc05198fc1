#pragma once

// Procedural kinematic tabletop world: scene generation, analytic multi-view
// rendering with a synthetic per-class semantic-feature oracle, point-cloud
// observations, scripted experts, and keyframe execution.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnact::sim {

struct Vec3 {
    float x = 0, y = 0, z = 0;
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(float s) const { return {x * s, y * s, z * s}; }
    float dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    float norm() const;
    Vec3 normalized() const;
};

struct Aabb {
    Vec3 lo, hi;
    bool contains(const Vec3& p) const {
        return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z &&
               p.z <= hi.z;
    }
    Vec3 clamp(const Vec3& p) const;
};

constexpr int kFeatureDim = 8;   // d_f, synthetic semantic embedding width
constexpr int kLangDim = 16;     // d_l
constexpr int kNumClasses = 5;   // table, manipuland, distractor, marker, container
constexpr int kCloudPoints = 2048;
constexpr float kGraspRadius = 0.02f;

enum class TaskId { push_to_target, put_in_bin, stack_block, ood_sphere_to_pad, ood_pillar_to_bin };

inline constexpr std::array<TaskId, 3> kDeskTasks = {TaskId::push_to_target, TaskId::put_in_bin,
                                                     TaskId::stack_block};
inline constexpr std::array<TaskId, 2> kOodTasks = {TaskId::ood_sphere_to_pad,
                                                    TaskId::ood_pillar_to_bin};

std::string task_name(TaskId t);
TaskId task_from_name(const std::string& s);

struct Primitive {
    enum class Kind { sphere, box } kind = Kind::box;
    Vec3 center;
    Vec3 half;       // box half extents
    float radius = 0;  // sphere radius
    Vec3 albedo;
    int class_id = 0;
    int color_index = -1;  // palette index, -1 for fixed table color slot
};

struct Scene {
    TaskId task = TaskId::push_to_target;
    std::uint64_t seed = 0;
    std::vector<Primitive> objects;
    Aabb workspace;
    Vec3 goal_pos;       // task-specific goal point in world coordinates
    int manipuland = -1;  // index into objects
    int target_ref = -1;  // marker/bin/base index
    std::string instruction;
};

struct Camera {
    Vec3 position, look_at, up{0, 0, 1};
    float fov_y = 1.0472f;  // radians
    int height = 64, width = 64;
};

struct CameraView {
    Camera camera;
    std::vector<float> rgb;    // H*W*3
    std::vector<float> feat;   // H*W*d_f
    std::vector<float> depth;  // H*W, +inf on miss
};

struct Observation {
    std::vector<Vec3> points;
    std::vector<Vec3> colors;
    std::array<float, 4> proprio{};             // gripper xyz + open fraction
    std::array<float, kLangDim> lang_embed{};   // unit L2 norm
    std::vector<CameraView> views;
};

struct GripperState {
    Vec3 pos{0, 0, 0.25f};
    float open = 1.0f;
    int grasped = -1;   // object index, -1 when empty
    Vec3 grasp_offset;  // object center relative to gripper while grasped
};

struct Frame {
    double t = 0;
    std::array<float, 4> velocity{};  // d(pose, open)/dt by finite difference
    Vec3 pose;
    float open = 1.0f;
    std::vector<Vec3> object_centers;  // scene state snapshot
};

struct Demonstration {
    TaskId task = TaskId::push_to_target;
    std::uint64_t variation_seed = 0;
    Scene scene0;
    std::vector<Frame> frames;
};

struct PlacementError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ExpertError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateObservation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// palette / semantics -------------------------------------------------------

const std::array<Vec3, 20>& palette();
const std::array<std::string, 20>& palette_names();
/// Fixed, seed-pinned table of unit-norm per-class embeddings (the synthetic
/// stand-in for foundation-model features).
const std::array<std::array<float, kFeatureDim>, kNumClasses>& class_embeddings();

std::array<float, kLangDim> lang_embedding(const std::string& instruction);

// scenes & rendering --------------------------------------------------------

Aabb default_workspace();
Scene generate_scene(TaskId task, std::uint64_t variation_seed);
std::vector<Camera> training_cameras();
Camera holdout_camera();

/// Analytic flat-shaded render: rgb = albedo of nearest hit (black miss),
/// feat = class embedding row (zero miss), depth = hit distance (+inf miss).
CameraView render_ground_truth(const Scene& scene, const Camera& cam);

/// Camera ray through pixel center (row i, col j).
void pixel_ray(const Camera& cam, float i, float j, Vec3& origin, Vec3& dir);
/// Projects a world point; returns (row, col, depth) or nullopt if behind.
std::optional<std::array<float, 3>> project(const Camera& cam, const Vec3& p);
/// Nearest hit distance along a unit ray, +inf on miss.
float intersect_scene(const Scene& scene, const Vec3& o, const Vec3& d, int* hit_index = nullptr);

Observation make_observation(const Scene& scene, const GripperState& gripper,
                             const std::vector<Camera>& cams);

// demonstrations & execution ------------------------------------------------

Demonstration scripted_expert(const Scene& scene, TaskId task);
/// Scene as of frame i of a demonstration (object centers substituted).
Scene scene_at_frame(const Demonstration& demo, size_t i);

/// Moves the gripper linearly to `target`, applies the open state, handles
/// grasp/release attachment. Returns true if the target had to be clipped to
/// the workspace.
bool execute_keyframe(GripperState& state, const Vec3& target, bool open, Scene& scene);

bool check_success(const Scene& scene, TaskId task);

}  // namespace dnact::sim
