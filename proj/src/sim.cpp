#include "dnact/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace dnact::sim {

namespace {
constexpr float kInf = std::numeric_limits<float>::infinity();
constexpr float kDt = 0.05f;       // expert step, seconds
constexpr float kSpeed = 0.4f;     // expert linear speed, m/s
constexpr int kDwell = 3;          // frames held at each pause
}  // namespace

float Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Vec3 Vec3::normalized() const {
    float n = norm();
    return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{0, 0, 0};
}

Vec3 Aabb::clamp(const Vec3& p) const {
    return {std::min(std::max(p.x, lo.x), hi.x), std::min(std::max(p.y, lo.y), hi.y),
            std::min(std::max(p.z, lo.z), hi.z)};
}

std::string task_name(TaskId t) {
    switch (t) {
        case TaskId::push_to_target: return "push_to_target";
        case TaskId::put_in_bin: return "put_in_bin";
        case TaskId::stack_block: return "stack_block";
        case TaskId::ood_sphere_to_pad: return "ood_sphere_to_pad";
        case TaskId::ood_pillar_to_bin: return "ood_pillar_to_bin";
    }
    return "?";
}

TaskId task_from_name(const std::string& s) {
    for (TaskId t : {TaskId::push_to_target, TaskId::put_in_bin, TaskId::stack_block,
                     TaskId::ood_sphere_to_pad, TaskId::ood_pillar_to_bin})
        if (task_name(t) == s) return t;
    throw std::invalid_argument("unknown task: " + s);
}

const std::array<Vec3, 20>& palette() {
    static const std::array<Vec3, 20> p = {{{1, 0, 0},          {0.5f, 0, 0},
                                            {0, 1, 0},          {0, 0.5f, 0},
                                            {0, 0, 1},          {0, 0, 0.5f},
                                            {1, 1, 0},          {0, 1, 1},
                                            {1, 0, 1},          {0.75f, 0.75f, 0.75f},
                                            {0.5f, 0.5f, 0.5f}, {1, 0.65f, 0},
                                            {0.5f, 0.5f, 0},    {0.5f, 0, 0.5f},
                                            {0, 0.5f, 0.5f},    {0, 0.5f, 1},
                                            {0.93f, 0.51f, 0.93f}, {1, 0, 0.5f},
                                            {0.05f, 0.05f, 0.05f}, {1, 1, 1}}};
    return p;
}

const std::array<std::string, 20>& palette_names() {
    static const std::array<std::string, 20> n = {
        "red",  "maroon", "lime",   "green",  "blue",  "navy",  "yellow", "cyan",  "magenta",
        "silver", "gray", "orange", "olive",  "purple", "teal", "azure",  "violet", "rose",
        "black", "white"};
    return n;
}

// Per-class color ranges. The appearance-to-class rule is global across all
// task suites so that out-of-domain pre-training transfers.
namespace {
constexpr int kTableColor = 10;  // gray, reserved for the table
const std::array<std::pair<int, int>, kNumClasses> kClassColors = {{
    {kTableColor, kTableColor},  // 0 table
    {0, 6},                      // 1 manipuland
    {7, 9},                      // 2 distractor (plus 11..13, handled below)
    {14, 16},                    // 3 marker
    {17, 19},                    // 4 container
}};

template <typename Rng>
int sample_color(int class_id, Rng& rng) {
    if (class_id == 2) {
        // distractor range skips the table's gray
        static const int opts[6] = {7, 8, 9, 11, 12, 13};
        return opts[std::uniform_int_distribution<int>(0, 5)(rng)];
    }
    auto [lo, hi] = kClassColors[static_cast<size_t>(class_id)];
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}
}  // namespace

const std::array<std::array<float, kFeatureDim>, kNumClasses>& class_embeddings() {
    static const auto table = [] {
        std::array<std::array<float, kFeatureDim>, kNumClasses> t{};
        std::mt19937_64 rng(0x5EEDF00Dull);
        std::normal_distribution<float> g(0.f, 1.f);
        for (auto& row : t) {
            float n = 0;
            for (auto& v : row) {
                v = g(rng);
                n += v * v;
            }
            n = std::sqrt(n);
            for (auto& v : row) v /= n;
        }
        return t;
    }();
    return table;
}

std::array<float, kLangDim> lang_embedding(const std::string& instruction) {
    std::array<float, kLangDim> e{};
    float norm = 0;
    for (int i = 0; i < kLangDim; ++i) {
        // FNV-1a over (instruction, lane index)
        std::uint64_t h = 1469598103934665603ull;
        for (char c : instruction) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
        h = (h ^ static_cast<std::uint64_t>(i)) * 1099511628211ull;
        e[static_cast<size_t>(i)] = static_cast<float>(static_cast<double>(h >> 11) /
                                                       static_cast<double>(1ull << 53)) *
                                        2.0f -
                                    1.0f;
        norm += e[static_cast<size_t>(i)] * e[static_cast<size_t>(i)];
    }
    norm = std::sqrt(norm);
    for (auto& v : e) v /= norm;
    return e;
}

Aabb default_workspace() { return {{-0.35f, -0.35f, -0.05f}, {0.35f, 0.35f, 0.40f}}; }

namespace {

Primitive make_table() {
    Primitive p;
    p.kind = Primitive::Kind::box;
    p.center = {0, 0, -0.02f};
    p.half = {0.35f, 0.35f, 0.02f};
    p.albedo = palette()[kTableColor];
    p.class_id = 0;
    p.color_index = kTableColor;
    return p;
}

template <typename Rng>
Vec3 sample_xy(Rng& rng, float z) {
    std::uniform_real_distribution<float> d(-0.22f, 0.22f);
    return {d(rng), d(rng), z};
}

float xy_dist(const Vec3& a, const Vec3& b) {
    return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y));
}

}  // namespace

Scene generate_scene(TaskId task, std::uint64_t variation_seed) {
    std::mt19937_64 rng(variation_seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(task));
    Scene s;
    s.task = task;
    s.seed = variation_seed;
    s.workspace = default_workspace();
    s.objects.push_back(make_table());

    struct Spec {
        Primitive::Kind kind;
        Vec3 half;
        float radius;
        int class_id;
    };
    std::vector<Spec> specs;
    switch (task) {
        case TaskId::push_to_target:
            specs = {{Primitive::Kind::box, {0.02f, 0.02f, 0.02f}, 0, 1},
                     {Primitive::Kind::box, {0.02f, 0.02f, 0.02f}, 0, 2},
                     {Primitive::Kind::box, {0.035f, 0.035f, 0.005f}, 0, 3}};
            break;
        case TaskId::put_in_bin:
            specs = {{Primitive::Kind::box, {0.02f, 0.02f, 0.02f}, 0, 1},
                     {Primitive::Kind::box, {0.02f, 0.02f, 0.02f}, 0, 2},
                     {Primitive::Kind::box, {0.06f, 0.06f, 0.03f}, 0, 4}};
            break;
        case TaskId::stack_block:
            specs = {{Primitive::Kind::box, {0.02f, 0.02f, 0.02f}, 0, 1},
                     {Primitive::Kind::box, {0.02f, 0.02f, 0.02f}, 0, 2},
                     {Primitive::Kind::box, {0.025f, 0.025f, 0.025f}, 0, 4}};
            break;
        case TaskId::ood_sphere_to_pad:
            specs = {{Primitive::Kind::sphere, {}, 0.025f, 1},
                     {Primitive::Kind::sphere, {}, 0.025f, 2},
                     {Primitive::Kind::box, {0.05f, 0.05f, 0.01f}, 0, 3}};
            break;
        case TaskId::ood_pillar_to_bin:
            specs = {{Primitive::Kind::box, {0.015f, 0.015f, 0.05f}, 0, 1},
                     {Primitive::Kind::box, {0.015f, 0.015f, 0.05f}, 0, 2},
                     {Primitive::Kind::box, {0.07f, 0.07f, 0.035f}, 0, 4}};
            break;
    }

    // Rejection-sample non-overlapping placements (and keep the manipuland
    // off the goal so freshly generated scenes never start solved).
    std::vector<Vec3> centers;
    for (int attempt = 0;; ++attempt) {
        if (attempt >= 1000)
            throw PlacementError("scene placement failed after 1000 attempts, task " +
                                 task_name(task) + " seed " + std::to_string(variation_seed));
        centers.clear();
        bool ok = true;
        for (auto& sp : specs) {
            float z = sp.kind == Primitive::Kind::sphere ? sp.radius : sp.half.z;
            Vec3 c = sample_xy(rng, z);
            for (auto& prev : centers)
                if (xy_dist(c, prev) < 0.13f) ok = false;
            centers.push_back(c);
            if (!ok) break;
        }
        if (ok && xy_dist(centers[0], centers[2]) > 0.10f) break;
    }

    for (size_t i = 0; i < specs.size(); ++i) {
        Primitive p;
        p.kind = specs[i].kind;
        p.center = centers[i];
        p.half = specs[i].half;
        p.radius = specs[i].radius;
        p.class_id = specs[i].class_id;
        p.color_index = sample_color(p.class_id, rng);
        p.albedo = palette()[static_cast<size_t>(p.color_index)];
        s.objects.push_back(p);
    }
    s.manipuland = 1;
    s.target_ref = 3;

    const Primitive& obj = s.objects[static_cast<size_t>(s.manipuland)];
    const Primitive& tgt = s.objects[static_cast<size_t>(s.target_ref)];
    const float obj_hz = obj.kind == Primitive::Kind::sphere ? obj.radius : obj.half.z;
    switch (task) {
        case TaskId::push_to_target:
        case TaskId::ood_sphere_to_pad:
            s.goal_pos = tgt.center + Vec3{0, 0, tgt.half.z + obj_hz};
            break;
        case TaskId::put_in_bin:
        case TaskId::ood_pillar_to_bin:
            s.goal_pos = tgt.center;
            break;
        case TaskId::stack_block:
            s.goal_pos = tgt.center + Vec3{0, 0, tgt.half.z + obj_hz};
            break;
    }

    const std::string color = palette_names()[static_cast<size_t>(obj.color_index)];
    switch (task) {
        case TaskId::push_to_target:
            s.instruction = "push the " + color + " block to the target";
            break;
        case TaskId::put_in_bin: s.instruction = "put the " + color + " block in the bin"; break;
        case TaskId::stack_block:
            s.instruction = "stack the " + color + " block on the base";
            break;
        case TaskId::ood_sphere_to_pad:
            s.instruction = "place the " + color + " ball on the pad";
            break;
        case TaskId::ood_pillar_to_bin:
            s.instruction = "put the " + color + " pillar in the bin";
            break;
    }
    return s;
}

std::vector<Camera> training_cameras() {
    Camera a{{0.55f, 0.0f, 0.45f}, {0, 0, 0.05f}};
    Camera b{{-0.28f, 0.48f, 0.45f}, {0, 0, 0.05f}};
    Camera c{{-0.28f, -0.48f, 0.45f}, {0, 0, 0.05f}};
    return {a, b, c};
}

Camera holdout_camera() { return Camera{{0.40f, 0.40f, 0.50f}, {0, 0, 0.05f}}; }

// ray tracing ---------------------------------------------------------------

namespace {

float intersect_sphere(const Vec3& o, const Vec3& d, const Vec3& c, float r) {
    Vec3 oc = o - c;
    float b = oc.dot(d);
    float disc = b * b - (oc.dot(oc) - r * r);
    if (disc < 0) return kInf;
    float sq = std::sqrt(disc);
    float t = -b - sq;
    if (t > 1e-4f) return t;
    t = -b + sq;
    return t > 1e-4f ? t : kInf;
}

float intersect_box(const Vec3& o, const Vec3& d, const Vec3& c, const Vec3& h) {
    float t0 = -kInf, t1 = kInf;
    const float os[3] = {o.x - c.x, o.y - c.y, o.z - c.z};
    const float ds[3] = {d.x, d.y, d.z};
    const float hs[3] = {h.x, h.y, h.z};
    for (int a = 0; a < 3; ++a) {
        if (std::abs(ds[a]) < 1e-9f) {
            if (std::abs(os[a]) > hs[a]) return kInf;
            continue;
        }
        float inv = 1.0f / ds[a];
        float ta = (-hs[a] - os[a]) * inv;
        float tb = (hs[a] - os[a]) * inv;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return kInf;
    }
    if (t0 > 1e-4f) return t0;
    return t1 > 1e-4f ? t1 : kInf;
}

}  // namespace

float intersect_scene(const Scene& scene, const Vec3& o, const Vec3& d, int* hit_index) {
    float best = kInf;
    int bi = -1;
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        const Primitive& p = scene.objects[i];
        float t = p.kind == Primitive::Kind::sphere ? intersect_sphere(o, d, p.center, p.radius)
                                                    : intersect_box(o, d, p.center, p.half);
        if (t < best) {
            best = t;
            bi = static_cast<int>(i);
        }
    }
    if (hit_index) *hit_index = bi;
    return best;
}

void pixel_ray(const Camera& cam, float i, float j, Vec3& origin, Vec3& dir) {
    Vec3 fwd = (cam.look_at - cam.position).normalized();
    Vec3 right = fwd.cross(cam.up).normalized();
    Vec3 up = right.cross(fwd);
    const float th = std::tan(cam.fov_y * 0.5f);
    const float aspect = static_cast<float>(cam.width) / static_cast<float>(cam.height);
    const float px = ((j + 0.5f) / static_cast<float>(cam.width) * 2 - 1) * th * aspect;
    const float py = (1 - (i + 0.5f) / static_cast<float>(cam.height) * 2) * th;
    origin = cam.position;
    dir = (fwd + right * px + up * py).normalized();
}

std::optional<std::array<float, 3>> project(const Camera& cam, const Vec3& p) {
    Vec3 fwd = (cam.look_at - cam.position).normalized();
    Vec3 right = fwd.cross(cam.up).normalized();
    Vec3 up = right.cross(fwd);
    Vec3 rel = p - cam.position;
    const float zc = rel.dot(fwd);
    if (zc <= 1e-6f) return std::nullopt;
    const float th = std::tan(cam.fov_y * 0.5f);
    const float aspect = static_cast<float>(cam.width) / static_cast<float>(cam.height);
    const float xn = rel.dot(right) / zc / (th * aspect);
    const float yn = rel.dot(up) / zc / th;
    const float col = (xn + 1) * 0.5f * static_cast<float>(cam.width) - 0.5f;
    const float row = (1 - yn) * 0.5f * static_cast<float>(cam.height) - 0.5f;
    return std::array<float, 3>{row, col, rel.norm()};
}

CameraView render_ground_truth(const Scene& scene, const Camera& cam) {
    if (cam.height < 8 || cam.width < 8 || cam.fov_y <= 0 || cam.fov_y >= 3.14159f)
        throw std::invalid_argument("render_ground_truth: invalid camera");
    CameraView v;
    v.camera = cam;
    const int H = cam.height, W = cam.width;
    v.rgb.assign(static_cast<size_t>(H) * W * 3, 0.f);
    v.feat.assign(static_cast<size_t>(H) * W * kFeatureDim, 0.f);
    v.depth.assign(static_cast<size_t>(H) * W, kInf);
    const auto& emb = class_embeddings();
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            Vec3 o, d;
            pixel_ray(cam, static_cast<float>(i), static_cast<float>(j), o, d);
            int hit = -1;
            float t = intersect_scene(scene, o, d, &hit);
            if (hit < 0 || !(t < kInf)) continue;
            const size_t px = static_cast<size_t>(i) * W + j;
            v.depth[px] = t;
            const Primitive& p = scene.objects[static_cast<size_t>(hit)];
            v.rgb[px * 3 + 0] = p.albedo.x;
            v.rgb[px * 3 + 1] = p.albedo.y;
            v.rgb[px * 3 + 2] = p.albedo.z;
            const auto& row = emb[static_cast<size_t>(p.class_id)];
            for (int c = 0; c < kFeatureDim; ++c) v.feat[px * kFeatureDim + c] = row[static_cast<size_t>(c)];
        }
    return v;
}

Observation make_observation(const Scene& scene, const GripperState& gripper,
                             const std::vector<Camera>& cams) {
    if (cams.empty()) throw std::invalid_argument("make_observation: need at least one camera");
    Observation obs;
    std::vector<Vec3> pts, cols;
    for (const Camera& cam : cams) {
        CameraView view = render_ground_truth(scene, cam);
        const int H = cam.height, W = cam.width;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const size_t px = static_cast<size_t>(i) * W + j;
                const float t = view.depth[px];
                if (!(t < kInf)) continue;
                Vec3 o, d;
                pixel_ray(cam, static_cast<float>(i), static_cast<float>(j), o, d);
                Vec3 p = o + d * t;
                if (!scene.workspace.contains(p)) p = scene.workspace.clamp(p);
                pts.push_back(p);
                cols.push_back({view.rgb[px * 3], view.rgb[px * 3 + 1], view.rgb[px * 3 + 2]});
            }
        obs.views.push_back(std::move(view));
    }
    if (pts.size() < 32)
        throw DegenerateObservation("only " + std::to_string(pts.size()) + " valid points");

    if (static_cast<int>(pts.size()) > kCloudPoints) {
        std::vector<int> idx(pts.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        std::mt19937_64 rng(0xD0C5EEDull);  // fixed: observation is a pure function
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(kCloudPoints);
        for (int i : idx) {
            obs.points.push_back(pts[static_cast<size_t>(i)]);
            obs.colors.push_back(cols[static_cast<size_t>(i)]);
        }
    } else {
        obs.points = std::move(pts);
        obs.colors = std::move(cols);
    }
    obs.proprio = {gripper.pos.x, gripper.pos.y, gripper.pos.z, gripper.open};
    obs.lang_embed = lang_embedding(scene.instruction);
    return obs;
}

// expert & execution --------------------------------------------------------

namespace {

void attach_if_grasping(GripperState& g, Scene& scene) {
    float best = kGraspRadius;
    int bi = -1;
    for (size_t i = 1; i < scene.objects.size(); ++i) {  // skip table
        float d = (scene.objects[i].center - g.pos).norm();
        if (d < best) {
            best = d;
            bi = static_cast<int>(i);
        }
    }
    g.grasped = bi;
    if (bi >= 0) g.grasp_offset = scene.objects[static_cast<size_t>(bi)].center - g.pos;
}

void move_gripper(GripperState& g, const Vec3& target, Scene& scene) {
    g.pos = target;
    if (g.grasped >= 0)
        scene.objects[static_cast<size_t>(g.grasped)].center = g.pos + g.grasp_offset;
}

struct Recorder {
    Demonstration demo;
    Scene* scene;
    GripperState* grip;
    double t = 0;

    void snap() {
        Frame f;
        f.t = t;
        f.pose = grip->pos;
        f.open = grip->open;
        for (auto& o : scene->objects) f.object_centers.push_back(o.center);
        demo.frames.push_back(std::move(f));
        t += kDt;
    }

    void move_to(const Vec3& target) {
        Vec3 from = grip->pos;
        float dist = (target - from).norm();
        int steps = std::max(1, static_cast<int>(std::ceil(dist / (kSpeed * kDt))));
        for (int s = 1; s <= steps; ++s) {
            Vec3 p = from + (target - from) * (static_cast<float>(s) / static_cast<float>(steps));
            move_gripper(*grip, p, *scene);
            snap();
        }
    }

    void dwell(int n = kDwell) {
        for (int i = 0; i < n; ++i) snap();
    }

    void set_open(float open) {
        bool closing = grip->open > 0.5f && open <= 0.5f;
        bool opening = grip->open <= 0.5f && open > 0.5f;
        grip->open = open;
        if (closing) attach_if_grasping(*grip, *scene);
        if (opening) g_release();
        snap();
    }

    void g_release() { grip->grasped = -1; }
};

}  // namespace

Demonstration scripted_expert(const Scene& scene0, TaskId task) {
    if (scene0.task != task) throw ExpertError("scene/task mismatch");
    Scene scene = scene0;
    GripperState grip;
    Recorder rec;
    rec.demo.task = task;
    rec.demo.variation_seed = scene0.seed;
    rec.demo.scene0 = scene0;
    rec.scene = &scene;
    rec.grip = &grip;

    const Vec3 obj = scene.objects[static_cast<size_t>(scene.manipuland)].center;
    const Vec3 goal = scene.goal_pos;
    const float hover = 0.10f;

    rec.snap();  // start frame
    rec.move_to(obj + Vec3{0, 0, hover});
    rec.move_to(obj);
    rec.dwell();
    rec.set_open(0.0f);
    rec.dwell();
    rec.move_to(obj + Vec3{0, 0, hover});
    rec.move_to(goal + Vec3{0, 0, hover});
    rec.move_to(goal);
    rec.dwell();
    rec.set_open(1.0f);
    rec.dwell();
    rec.move_to(goal + Vec3{0, 0, hover});
    rec.dwell();

    // finite-difference velocities
    auto& frames = rec.demo.frames;
    for (size_t i = 1; i < frames.size(); ++i) {
        const Vec3 dp = frames[i].pose - frames[i - 1].pose;
        frames[i].velocity = {dp.x / kDt, dp.y / kDt, dp.z / kDt,
                              (frames[i].open - frames[i - 1].open) / kDt};
    }

    if (!check_success(scene, task))
        throw ExpertError("expert failed on task " + task_name(task) + " seed " +
                          std::to_string(scene0.seed));
    return rec.demo;
}

Scene scene_at_frame(const Demonstration& demo, size_t i) {
    Scene s = demo.scene0;
    const auto& centers = demo.frames.at(i).object_centers;
    for (size_t k = 0; k < s.objects.size(); ++k) s.objects[k].center = centers[k];
    return s;
}

bool execute_keyframe(GripperState& state, const Vec3& target, bool open, Scene& scene) {
    Vec3 t = target;
    bool clipped = false;
    if (!scene.workspace.contains(t)) {
        t = scene.workspace.clamp(t);
        clipped = true;
    }
    move_gripper(state, t, scene);
    const bool was_open = state.open > 0.5f;
    state.open = open ? 1.0f : 0.0f;
    if (was_open && !open) attach_if_grasping(state, scene);
    if (!was_open && open) state.grasped = -1;
    return clipped;
}

bool check_success(const Scene& scene, TaskId task) {
    const Vec3 c = scene.objects[static_cast<size_t>(scene.manipuland)].center;
    const Primitive& tgt = scene.objects[static_cast<size_t>(scene.target_ref)];
    switch (task) {
        case TaskId::push_to_target:
        case TaskId::ood_sphere_to_pad:
            return (c - scene.goal_pos).norm() < 0.03f;
        case TaskId::put_in_bin:
        case TaskId::ood_pillar_to_bin:
            return std::abs(c.x - tgt.center.x) <= tgt.half.x &&
                   std::abs(c.y - tgt.center.y) <= tgt.half.y &&
                   std::abs(c.z - tgt.center.z) <= tgt.half.z + 0.02f;
        case TaskId::stack_block: {
            const float horiz = xy_dist(c, tgt.center);
            const float rest_z = tgt.center.z + tgt.half.z +
                                 scene.objects[static_cast<size_t>(scene.manipuland)].half.z;
            return horiz < 0.02f && std::abs(c.z - rest_z) < 0.015f;
        }
    }
    return false;
}

}  // namespace dnact::sim
