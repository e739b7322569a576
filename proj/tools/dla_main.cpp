// dla: mask-free cranial angiography toolkit.
//
// Subcommands cover the whole pipeline: synthetic case generation, tissue
// label generation from subtraction imagery, classifier training, voxel
// classification, per-case and cohort metrics, and rendered reports. Exit
// codes: 0 success, 2 configuration error, 3 data error, 4 numerical error.

#include <algorithm>
#include <cerrno>
#include <cinttypes>
#include <climits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "dla/config.hpp"
#include "dla/error.hpp"
#include "dla/inference.hpp"
#include "dla/labelgen.hpp"
#include "dla/metrics.hpp"
#include "dla/net.hpp"
#include "dla/patches.hpp"
#include "dla/phantom.hpp"
#include "dla/render.hpp"
#include "dla/rng.hpp"
#include "dla/trainer.hpp"
#include "dla/volume.hpp"

namespace fs = std::filesystem;

namespace {

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        out.push_back(s.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

std::int64_t parse_i64(const std::string& s, const std::string& what) {
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0' || errno == ERANGE)
        throw dla::ConfigError(what + ": bad integer '" + s + "'");
    return v;
}

double parse_f64(const std::string& s, const std::string& what) {
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || errno == ERANGE)
        throw dla::ConfigError(what + ": bad number '" + s + "'");
    return v;
}

// ---------------------------------------------------------------- schemas

dla::Schema phantom_schema() {
    using dla::OptType;
    return {
        {"seed", {OptType::Int, "0"}},
        {"nx", {OptType::Int, "96"}},
        {"ny", {OptType::Int, "96"}},
        {"nz", {OptType::Int, "64"}},
        {"spacing_mm", {OptType::Real, "0.46"}},
        {"noise_sigma_hu", {OptType::Real, "15"}},
        {"soft_hu_lo", {OptType::Real, "0"}},
        {"soft_hu_hi", {OptType::Real, "80"}},
        {"motion_tx_mm", {OptType::Real, "0"}},
        {"motion_ty_mm", {OptType::Real, "0"}},
        {"motion_tz_mm", {OptType::Real, "0"}},
        {"motion_rot_z_deg", {OptType::Real, "0"}},
        {"n_root_branches", {OptType::Int, "2"}},
        {"branch_depth", {OptType::Int, "3"}},
        {"vessel_radius_mm_lo", {OptType::Real, "0.5"}},
        {"vessel_radius_mm_hi", {OptType::Real, "2.5"}},
        {"vessel_fill_hu_lo", {OptType::Real, "800"}},
        {"vessel_fill_hu_hi", {OptType::Real, "1500"}},
        {"skull_semi_x_mm", {OptType::Real, "19"}},
        {"skull_semi_y_mm", {OptType::Real, "19"}},
        {"skull_semi_z_mm", {OptType::Real, "12.5"}},
        {"skull_thickness_mm", {OptType::Real, "4"}},
        {"bone_hu_lo", {OptType::Real, "700"}},
        {"bone_hu_hi", {OptType::Real, "1600"}},
        {"aneurysm_count_lo", {OptType::Int, "0"}},
        {"aneurysm_count_hi", {OptType::Int, "2"}},
        {"aneurysm_radius_mm_lo", {OptType::Real, "1"}},
        {"aneurysm_radius_mm_hi", {OptType::Real, "2"}},
    };
}

dla::Schema labelgen_schema() {
    using dla::OptType;
    return {
        {"seed", {OptType::Int, "0"}},
        {"vessel_threshold_hu", {OptType::Real, "600"}},
        {"vessel_min_component_voxels", {OptType::Int, "50"}},
        {"bone_threshold_hu", {OptType::Real, "400"}},
        {"bone_min_component_voxels", {OptType::Int, "500"}},
        {"soft_lo_hu", {OptType::Real, "-400"}},
        {"soft_hi_hu", {OptType::Real, "500"}},
        {"erosion_radius_voxels", {OptType::Int, "1"}},
    };
}

dla::Schema train_schema() {
    using dla::OptType;
    return {
        {"seed", {OptType::Int, "0"}},
        {"conv_layers", {OptType::Int, "8"}},
        {"base_channels", {OptType::Int, "16"}},
        {"stage_boundaries", {OptType::Text, ""}},
        {"patch_p", {OptType::Int, "41"}},
        {"patch_s", {OptType::Int, "5"}},
        {"input_kernel", {OptType::Int, "5"}},
        {"n_classes", {OptType::Int, "3"}},
        {"batch_size", {OptType::Int, "512"}},
        {"momentum", {OptType::Real, "0.9"}},
        {"lr_points", {OptType::Text, "0:1e-3,1:1e-4,1.5:1e-5"}},
        {"max_iterations", {OptType::Int, "2000"}},
        {"n_workers", {OptType::Int, "2"}},
        {"eval_interval", {OptType::Int, "50"}},
        {"patience", {OptType::Int, "10"}},
        {"min_delta", {OptType::Real, "1e-4"}},
        {"val_subsample", {OptType::Int, "1024"}},
    };
}

dla::Schema end2end_schema() {
    dla::Schema s;
    for (const auto& part : {phantom_schema(), labelgen_schema(), train_schema()})
        for (const auto& kv : part) s[kv.first] = kv.second;
    // desk-scale training defaults; one full run fits a coffee break
    // patch sized to the miniature anatomy so the pooled features stay
    // centered on the voxel being classified
    s["patch_p"].default_value = "13";
    s["patch_s"].default_value = "7";
    s["batch_size"].default_value = "128";
    s["max_iterations"].default_value = "1800";
    s["lr_points"].default_value = "0:1e-3,3.5:1e-4,4.5:1e-5";
    s["eval_interval"].default_value = "50";
    s["patience"].default_value = "36";
    s["val_subsample"].default_value = "2048";
    using dla::OptType;
    s["n_train"] = {OptType::Int, "5"};
    s["n_val"] = {OptType::Int, "2"};
    s["n_test"] = {OptType::Int, "3"};
    s["test_shift_vox"] = {OptType::Real, "1"};
    s["infer_workers"] = {OptType::Int, "2"};
    s["infer_batch"] = {OptType::Int, "512"};
    s["roi_margin_vox"] = {OptType::Int, "2"};
    s["roi_back_vox"] = {OptType::Int, "14"};
    s["roi_half_y"] = {OptType::Int, "14"};
    s["roi_half_z"] = {OptType::Int, "15"};
    return s;
}

// --------------------------------------------------- config -> core types

dla::PhantomSpec phantom_from(const dla::Config& c) {
    dla::PhantomSpec s;
    std::int64_t nx = c.get_int("nx"), ny = c.get_int("ny"), nz = c.get_int("nz");
    if (nx <= 0 || ny <= 0 || nz <= 0)
        throw dla::ConfigError("phantom: nx, ny, nz must be positive");
    s.dims = {std::uint32_t(nx), std::uint32_t(ny), std::uint32_t(nz)};
    s.spacing_mm = float(c.get_real("spacing_mm"));
    s.seed = std::uint64_t(c.get_int("seed"));
    s.noise_sigma_hu = c.get_real("noise_sigma_hu");
    s.soft_hu_lo = c.get_real("soft_hu_lo");
    s.soft_hu_hi = c.get_real("soft_hu_hi");
    s.motion.tx_mm = c.get_real("motion_tx_mm");
    s.motion.ty_mm = c.get_real("motion_ty_mm");
    s.motion.tz_mm = c.get_real("motion_tz_mm");
    s.motion.rot_z_deg = c.get_real("motion_rot_z_deg");
    s.vessels.n_root_branches = int(c.get_int("n_root_branches"));
    s.vessels.branch_depth = int(c.get_int("branch_depth"));
    s.vessels.radius_mm_lo = c.get_real("vessel_radius_mm_lo");
    s.vessels.radius_mm_hi = c.get_real("vessel_radius_mm_hi");
    s.vessels.fill_hu_lo = c.get_real("vessel_fill_hu_lo");
    s.vessels.fill_hu_hi = c.get_real("vessel_fill_hu_hi");
    s.skull.semi_x_mm = c.get_real("skull_semi_x_mm");
    s.skull.semi_y_mm = c.get_real("skull_semi_y_mm");
    s.skull.semi_z_mm = c.get_real("skull_semi_z_mm");
    s.skull.thickness_mm = c.get_real("skull_thickness_mm");
    s.skull.bone_hu_lo = c.get_real("bone_hu_lo");
    s.skull.bone_hu_hi = c.get_real("bone_hu_hi");
    s.aneurysm.count_lo = int(c.get_int("aneurysm_count_lo"));
    s.aneurysm.count_hi = int(c.get_int("aneurysm_count_hi"));
    s.aneurysm.radius_mm_lo = c.get_real("aneurysm_radius_mm_lo");
    s.aneurysm.radius_mm_hi = c.get_real("aneurysm_radius_mm_hi");
    return s;
}

dla::LabelGenConfig labelgen_from(const dla::Config& c) {
    dla::LabelGenConfig g;
    g.vessel_threshold_hu = float(c.get_real("vessel_threshold_hu"));
    g.bone_threshold_hu = float(c.get_real("bone_threshold_hu"));
    g.soft_lo_hu = float(c.get_real("soft_lo_hu"));
    g.soft_hi_hu = float(c.get_real("soft_hi_hu"));
    std::int64_t vmin = c.get_int("vessel_min_component_voxels");
    std::int64_t bmin = c.get_int("bone_min_component_voxels");
    std::int64_t er = c.get_int("erosion_radius_voxels");
    if (vmin < 0 || bmin < 0 || er < 0)
        throw dla::ConfigError("labelgen: component sizes and erosion radius must be >= 0");
    g.vessel_min_component_voxels = std::size_t(vmin);
    g.bone_min_component_voxels = std::size_t(bmin);
    g.erosion_radius_voxels = int(er);
    g.seed = std::uint64_t(c.get_int("seed"));
    return g;
}

dla::Architecture arch_from(const dla::Config& c) {
    dla::Architecture a;
    a.conv_layers = int(c.get_int("conv_layers"));
    a.base_channels = int(c.get_int("base_channels"));
    a.patch_p = int(c.get_int("patch_p"));
    a.patch_s = int(c.get_int("patch_s"));
    a.input_kernel = int(c.get_int("input_kernel"));
    a.n_classes = int(c.get_int("n_classes"));
    a.stage_boundaries.clear();
    const std::string& sb = c.get_text("stage_boundaries");
    if (!sb.empty())
        for (const auto& tok : split(sb, ','))
            a.stage_boundaries.push_back(int(parse_i64(tok, "stage_boundaries")));
    a.validate();
    return a;
}

dla::TrainConfig train_from(const dla::Config& c) {
    dla::TrainConfig t;
    t.batch_size = int(c.get_int("batch_size"));
    t.momentum = c.get_real("momentum");
    t.max_iterations = int(c.get_int("max_iterations"));
    t.n_workers = int(c.get_int("n_workers"));
    t.eval_interval = int(c.get_int("eval_interval"));
    t.patience = int(c.get_int("patience"));
    t.min_delta = c.get_real("min_delta");
    t.val_subsample = int(c.get_int("val_subsample"));
    t.seed = std::uint64_t(c.get_int("seed"));
    t.lr_points.clear();
    for (const auto& tok : split(c.get_text("lr_points"), ',')) {
        auto parts = split(tok, ':');
        if (parts.size() != 2)
            throw dla::ConfigError("train: lr_points entries must look like epoch:rate, got '" +
                                   tok + "'");
        t.lr_points.push_back(
            {parse_f64(parts[0], "lr_points"), parse_f64(parts[1], "lr_points")});
    }
    t.validate();
    return t;
}

dla::Roi parse_roi(const std::string& text, const dla::Dims3& dims) {
    if (text.empty()) return dla::Roi::full(dims);
    auto parts = split(text, ',');
    if (parts.size() != 6)
        throw dla::ConfigError("roi: expected x0,x1,y0,y1,z0,z1, got '" + text + "'");
    int v[6];
    for (int i = 0; i < 6; ++i) v[i] = int(parse_i64(parts[i], "roi"));
    dla::Roi r{{v[0], v[2], v[4]}, {v[1], v[3], v[5]}};
    r.validate(dims);
    return r;
}

std::string roi_text(const dla::Roi& r) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%d,%d", r.lo[0], r.hi[0], r.lo[1], r.hi[1],
                  r.lo[2], r.hi[2]);
    return buf;
}

// ------------------------------------------------------------- shared io

dla::Config make_config(const std::string& path, const dla::Schema& schema,
                        const std::vector<std::string>& sets) {
    if (path.empty()) return dla::Config::from_defaults(schema, sets);
    return dla::Config::from_file(path, schema, sets);
}

struct CaseVolumes {
    dla::Volume mask, fill;
    dla::LabelVolume truth;
};

CaseVolumes load_case(const fs::path& dir) {
    CaseVolumes c;
    c.mask = dla::load_volume(dir / "mask.dlav");
    c.fill = dla::load_volume(dir / "fill.dlav");
    c.truth = dla::load_labels(dir / "truth.dlal");
    if (!(c.mask.dims() == c.fill.dims()) || !(c.fill.dims() == c.truth.dims()))
        throw dla::ShapeError("case '" + dir.string() + "': mask, fill, truth dims differ");
    return c;
}

dla::LabelGenResult run_labelgen_pipeline(const dla::Volume& mask, const dla::Volume& fill,
                                          const dla::LabelGenConfig& cfg) {
    dla::Volume dsa = dla::subtract(fill, mask);
    dla::BinaryMask vessels = dla::extract_vasculature(dsa, cfg);
    dla::BinaryMask bone = dla::extract_bone(fill, vessels, cfg);
    dla::BinaryMask soft = dla::extract_soft_tissue(fill, vessels, bone, cfg);
    return dla::build_and_undersample(vessels, bone, soft, cfg.seed);
}

void write_metrics_tsv(const fs::path& path, const dla::CaseMetrics& m,
                       const dla::ConfusionTable& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw dla::IoError("cannot write '" + path.string() + "'");
    os << "sensitivity\tppv\tdsc\taccuracy\tsensitivity_defined\tppv_defined\tdsc_defined"
          "\ttp\tfp\tfn\ttn\n";
    os << g17(m.sensitivity) << '\t' << g17(m.ppv) << '\t' << g17(m.dsc) << '\t'
       << g17(m.accuracy) << '\t' << int(m.sensitivity_defined) << '\t' << int(m.ppv_defined)
       << '\t' << int(m.dsc_defined) << '\t' << t.tp << '\t' << t.fp << '\t' << t.fn << '\t'
       << t.tn << '\n';
    if (!os.flush()) throw dla::IoError("short write to '" + path.string() + "'");
}

dla::CaseMetrics read_metrics_tsv(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw dla::IoError("cannot read '" + path.string() + "'");
    std::string header, row;
    if (!std::getline(is, header) || !std::getline(is, row))
        throw dla::FormatError("metrics file '" + path.string() + "': expected header and row");
    auto cols = split(header, '\t');
    auto vals = split(row, '\t');
    if (vals.size() < cols.size())
        throw dla::FormatError("metrics file '" + path.string() + "': short row");
    auto field = [&](const std::string& name) -> double {
        for (std::size_t i = 0; i < cols.size(); ++i)
            if (cols[i] == name) return parse_f64(vals[i], "metrics field " + name);
        throw dla::FormatError("metrics file '" + path.string() + "': missing column '" + name +
                               "'");
    };
    dla::CaseMetrics m;
    m.sensitivity = field("sensitivity");
    m.ppv = field("ppv");
    m.dsc = field("dsc");
    m.accuracy = field("accuracy");
    return m;
}

// Table rows are statistics, columns the four headline metrics; interval
// bounds are clamped to the metric range [0, 1].
void write_cohort_tsv(const fs::path& path, const std::vector<dla::CaseMetrics>& per_case) {
    auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
    std::vector<double> sens, ppv, dsc, acc;
    for (const auto& m : per_case) {
        sens.push_back(m.sensitivity);
        ppv.push_back(m.ppv);
        dsc.push_back(m.dsc);
        acc.push_back(m.accuracy);
    }
    dla::CiSummary cs = dla::aggregate_ci(sens), cp = dla::aggregate_ci(ppv),
                   cd = dla::aggregate_ci(dsc), ca = dla::aggregate_ci(acc);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw dla::IoError("cannot write '" + path.string() + "'");
    os << "stat\tsensitivity\tppv\tdsc\taccuracy\n";
    auto row = [&](const char* name, double a, double b, double c, double d) {
        os << name << '\t' << g17(clamp01(a)) << '\t' << g17(clamp01(b)) << '\t'
           << g17(clamp01(c)) << '\t' << g17(clamp01(d)) << '\n';
    };
    row("mean", cs.mean, cp.mean, cd.mean, ca.mean);
    row("ci_lo", cs.lo, cp.lo, cd.lo, ca.lo);
    row("ci_hi", cs.hi, cp.hi, cd.hi, ca.hi);
    os << "n\t" << cs.n << '\t' << cp.n << '\t' << cd.n << '\t' << ca.n << '\n';
    if (!os.flush()) throw dla::IoError("short write to '" + path.string() + "'");
}

void write_report_tsv(const fs::path& path, const dla::ArtifactReport& rep) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw dla::IoError("cannot write '" + path.string() + "'");
    os << "case\tresidual_bone_voxels_dsa\tresidual_bone_voxels_dla\tratio\tratio_defined\n";
    os << rep.case_id << '\t' << rep.residual_bone_voxels_dsa << '\t'
       << rep.residual_bone_voxels_dla << '\t' << g17(rep.ratio) << '\t'
       << int(rep.ratio_defined) << '\n';
    if (!os.flush()) throw dla::IoError("short write to '" + path.string() + "'");
}

dla::ArtifactReport write_report_dir(const dla::PhantomCase& pc, const dla::LabelVolume& labels,
                                     const dla::LabelGenConfig& lgc, const std::string& case_id,
                                     const fs::path& dir) {
    fs::create_directories(dir);
    dla::Volume dsa = dla::subtract(pc.fill, pc.mask);
    dla::Volume dlav = dla::make_dla(pc.fill, labels);
    for (int axis : {0, 1, 2}) dla::render_mip_pair(dsa, dlav, axis, dir);
    dla::ArtifactReport rep = dla::artifact_report(pc, labels, lgc, case_id);
    write_report_tsv(dir / "report.tsv", rep);
    return rep;
}

// ------------------------------------------------------------ subcommands

void run_phantom(const std::string& spec_path, const std::string& out_dir,
                 const std::vector<std::string>& sets) {
    dla::Config cfg = make_config(spec_path, phantom_schema(), sets);
    dla::PhantomSpec spec = phantom_from(cfg);
    dla::PhantomCase pc = dla::generate_phantom(spec);
    fs::path dir = out_dir;
    fs::create_directories(dir);
    cfg.write_resolved(dir / "resolved.cfg");
    dla::save_volume(pc.mask, dir / "mask.dlav");
    dla::save_volume(pc.fill, dir / "fill.dlav");
    dla::save_labels(pc.truth, dir / "truth.dlal");
    std::printf("phantom: wrote mask.dlav, fill.dlav, truth.dlal to %s\n", dir.string().c_str());
}

void run_labelgen(const std::string& case_dir, const std::string& cfg_path,
                  const std::vector<std::string>& sets) {
    dla::Config cfg = make_config(cfg_path, labelgen_schema(), sets);
    dla::LabelGenConfig lgc = labelgen_from(cfg);
    fs::path dir = case_dir;
    CaseVolumes cv = load_case(dir);
    dla::LabelGenResult res = run_labelgen_pipeline(cv.mask, cv.fill, lgc);
    // named labelgen.cfg so the phantom echo in the same directory survives
    cfg.write_resolved(dir / "labelgen.cfg");
    dla::save_labels(res.labels, dir / "labels.dlal");
    dla::save_samples(res.samples, dir / "samples.tsv");
    std::printf("labelgen: %zu vessel, %zu bone, %zu soft samples%s%s\n", res.samples.n_vessel,
                res.samples.n_bone, res.samples.n_soft,
                res.samples.bone_shortfall ? " (bone pool short)" : "",
                res.samples.soft_shortfall ? " (soft pool short)" : "");
}

struct LoadedSet {
    std::vector<dla::Volume> fills;
    std::vector<dla::LabeledVoxelSet> sets;
    std::vector<std::string> names;
};

LoadedSet load_training_split(const fs::path& root, const std::string& prefix) {
    std::vector<fs::path> dirs;
    if (!fs::exists(root)) throw dla::IoError("train: data directory '" + root.string() + "' not found");
    for (const auto& e : fs::directory_iterator(root)) {
        if (!e.is_directory()) continue;
        std::string name = e.path().filename().string();
        if (name.rfind(prefix, 0) == 0) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty())
        throw dla::DataError("train: no '" + prefix + "*' case directories under '" +
                             root.string() + "'");
    LoadedSet out;
    out.fills.reserve(dirs.size());
    out.sets.reserve(dirs.size());
    for (const auto& d : dirs) {
        dla::Volume fill = dla::load_volume(d / "fill.dlav");
        dla::LabeledVoxelSet s = dla::load_samples(d / "samples.tsv", fill.dims());
        out.fills.push_back(std::move(fill));
        out.sets.push_back(std::move(s));
        out.names.push_back(d.filename().string());
    }
    return out;
}

void run_train(const std::string& cfg_path, const std::string& data_dir, const std::string& out,
               const std::vector<std::string>& sets) {
    dla::Config cfg = make_config(cfg_path, train_schema(), sets);
    dla::Architecture arch = arch_from(cfg);
    dla::TrainConfig tc = train_from(cfg);
    LoadedSet tr = load_training_split(data_dir, "train_");
    LoadedSet va = load_training_split(data_dir, "val_");
    std::vector<const dla::Volume*> tf, vf;
    std::vector<const dla::LabeledVoxelSet*> ts, vs;
    for (std::size_t i = 0; i < tr.fills.size(); ++i) {
        tf.push_back(&tr.fills[i]);
        ts.push_back(&tr.sets[i]);
    }
    for (std::size_t i = 0; i < va.fills.size(); ++i) {
        vf.push_back(&va.fills[i]);
        vs.push_back(&va.sets[i]);
    }
    std::printf("train: %zu train cases, %zu val cases\n", tr.fills.size(), va.fills.size());
    auto [params, hist] = dla::train(tc, arch, tf, ts, vf, vs);
    fs::path out_path = out;
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    cfg.write_resolved(out_path.parent_path() / "resolved.cfg");
    dla::save_checkpoint(arch, params, out_path);
    fs::path hist_path = out_path;
    hist_path.replace_extension(".history.tsv");
    dla::save_history(hist, hist_path);
    std::printf("train: stopped by %s, best val loss %s at iteration %" PRId64 "\n",
                hist.stop_reason.c_str(), g17(hist.best_val_loss).c_str(), hist.best_iteration);
}

void run_infer(const std::string& model_path, const std::string& fill_path,
               const std::string& roi_str, const std::string& out_labels,
               const std::string& out_dla, int workers, int batch) {
    auto [arch, params] = dla::load_checkpoint(model_path);
    dla::Volume fill = dla::load_volume(fill_path);
    dla::Roi roi = parse_roi(roi_str, fill.dims());
    if (workers < 1) throw dla::ConfigError("infer: workers must be >= 1");
    if (batch < 1) throw dla::ConfigError("infer: batch must be >= 1");
    dla::InferenceEngine engine(arch, params);
    dla::InferenceResult res = dla::classify_volume(engine, fill, roi, workers, batch);
    fs::path labels_path = out_labels;
    if (labels_path.has_parent_path()) fs::create_directories(labels_path.parent_path());
    dla::save_labels(res.labels, labels_path);
    if (!out_dla.empty()) {
        dla::Volume dlav = dla::make_dla(fill, res.labels);
        fs::path dla_path = out_dla;
        if (dla_path.has_parent_path()) fs::create_directories(dla_path.parent_path());
        dla::save_volume(dlav, dla_path);
    }
    dla::Schema echo{{"model", {dla::OptType::Text, ""}}, {"fill", {dla::OptType::Text, ""}},
                     {"roi", {dla::OptType::Text, ""}},   {"workers", {dla::OptType::Int, "1"}},
                     {"batch", {dla::OptType::Int, "512"}}, {"out_labels", {dla::OptType::Text, ""}},
                     {"out_dla", {dla::OptType::Text, ""}}};
    dla::Config ec = dla::Config::from_defaults(
        echo, {"model=" + model_path, "fill=" + fill_path, "roi=" + roi_text(roi),
               "workers=" + std::to_string(workers), "batch=" + std::to_string(batch),
               "out_labels=" + out_labels, "out_dla=" + out_dla});
    ec.write_resolved(labels_path.parent_path() / "resolved.cfg");
    std::printf("throughput_voxels_per_s=%s\n", g17(res.voxels_per_s).c_str());
}

void run_eval(const std::string& pred_path, const std::string& truth_path,
              const std::string& out) {
    dla::LabelVolume pred = dla::load_labels(pred_path);
    dla::LabeledVoxelSet truth = dla::load_samples(truth_path, pred.dims());
    dla::ConfusionTable t = dla::confusion(pred, truth);
    dla::CaseMetrics m = dla::metrics_from_table(t);
    std::printf("sensitivity=%s ppv=%s dsc=%s accuracy=%s (tp=%" PRId64 " fp=%" PRId64
                " fn=%" PRId64 " tn=%" PRId64 ")\n",
                g17(m.sensitivity).c_str(), g17(m.ppv).c_str(), g17(m.dsc).c_str(),
                g17(m.accuracy).c_str(), t.tp, t.fp, t.fn, t.tn);
    if (!out.empty()) {
        fs::path out_path = out;
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        write_metrics_tsv(out_path, m, t);
        fs::path echo = out_path;
        echo.replace_extension(".cfg");
        dla::Schema es{{"pred", {dla::OptType::Text, ""}},
                       {"truth", {dla::OptType::Text, ""}},
                       {"out", {dla::OptType::Text, ""}}};
        dla::Config::from_defaults(es, {"pred=" + pred_path, "truth=" + truth_path, "out=" + out})
            .write_resolved(echo);
    }
}

void run_cohort(const std::string& cases_dir, const std::string& out) {
    fs::path root = cases_dir;
    if (!fs::exists(root))
        throw dla::IoError("cohort: directory '" + root.string() + "' not found");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::string name = e.path().filename().string();
        if (name.size() > 12 && name.substr(name.size() - 12) == ".metrics.tsv")
            files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 2)
        throw dla::DataError("cohort: need at least two *.metrics.tsv files under '" +
                             root.string() + "'");
    std::vector<dla::CaseMetrics> per_case;
    for (const auto& f : files) per_case.push_back(read_metrics_tsv(f));
    fs::path out_path = out.empty() ? root / "cohort.tsv" : fs::path(out);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    write_cohort_tsv(out_path, per_case);
    fs::path echo = out_path;
    echo.replace_extension(".cfg");
    dla::Schema es{{"cases", {dla::OptType::Text, ""}}, {"out", {dla::OptType::Text, ""}}};
    dla::Config::from_defaults(es, {"cases=" + cases_dir, "out=" + out_path.string()})
        .write_resolved(echo);
    std::printf("cohort: %zu cases -> %s\n", per_case.size(), out_path.string().c_str());
}

void run_report(const std::string& case_dir, const std::string& model_path,
                const std::string& out_dir, const std::string& roi_str, int workers, int batch,
                const std::string& cfg_path, const std::vector<std::string>& sets) {
    dla::Config cfg = make_config(cfg_path, labelgen_schema(), sets);
    dla::LabelGenConfig lgc = labelgen_from(cfg);
    fs::path dir = case_dir;
    CaseVolumes cv = load_case(dir);
    auto [arch, params] = dla::load_checkpoint(model_path);
    dla::Roi roi = parse_roi(roi_str, cv.fill.dims());
    if (workers < 1) throw dla::ConfigError("report: workers must be >= 1");
    if (batch < 1) throw dla::ConfigError("report: batch must be >= 1");
    dla::InferenceEngine engine(arch, params);
    dla::InferenceResult res = dla::classify_volume(engine, cv.fill, roi, workers, batch);
    dla::PhantomCase pc;
    pc.mask = std::move(cv.mask);
    pc.fill = std::move(cv.fill);
    pc.truth = std::move(cv.truth);
    fs::path out = out_dir;
    fs::create_directories(out);
    cfg.write_resolved(out / "resolved.cfg");
    std::string case_id = dir.filename().string();
    if (case_id.empty()) case_id = dir.parent_path().filename().string();
    dla::ArtifactReport rep =
        write_report_dir(pc, res.labels, lgc, case_id, out);
    std::printf("report: residual bone dsa=%" PRId64 " dla=%" PRId64 " ratio=%s%s\n",
                rep.residual_bone_voxels_dsa, rep.residual_bone_voxels_dla,
                g17(rep.ratio).c_str(), rep.ratio_defined ? "" : " (undefined)");
}

// ----------------------------------------------------------------- end2end

// Evaluation window for a test case: a box around the vessel centroid that
// reaches backwards along -x by roi_back_vox and forwards along +x through
// the skull wall, so the window holds vessel, soft interior and a bone band.
dla::Roi derive_roi(const dla::LabelVolume& truth, int margin, int back, int half_y,
                    int half_z) {
    const dla::Dims3 d = truth.dims();
    const int nx = int(d.nx), ny = int(d.ny), nz = int(d.nz);
    double cx = 0, cy = 0, cz = 0;
    std::int64_t nv = 0;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x)
                if (truth.at(std::uint32_t(x), std::uint32_t(y), std::uint32_t(z)) ==
                    dla::kClassVessel) {
                    cx += x;
                    cy += y;
                    cz += z;
                    ++nv;
                }
    if (nv == 0) throw dla::DataError("roi: truth volume has no vessel voxels");
    int icx = int(std::lround(cx / double(nv)));
    int icy = int(std::lround(cy / double(nv)));
    int icz = int(std::lround(cz / double(nv)));
    icx = std::min(nx - 1, std::max(0, icx));
    icy = std::min(ny - 1, std::max(0, icy));
    icz = std::min(nz - 1, std::max(0, icz));
    // walk +x from the centroid, through any vessel and soft tissue, across
    // the first bone run, then margin voxels beyond it
    int x = icx;
    while (x < nx && truth.at(std::uint32_t(x), std::uint32_t(icy), std::uint32_t(icz)) !=
                         dla::kClassBone)
        ++x;
    while (x < nx && truth.at(std::uint32_t(x), std::uint32_t(icy), std::uint32_t(icz)) ==
                         dla::kClassBone)
        ++x;
    dla::Roi r;
    r.lo[0] = std::max(0, icx - back);
    r.hi[0] = std::min(nx, x + margin);
    r.lo[1] = std::max(0, icy - half_y);
    r.hi[1] = std::min(ny, icy + half_y);
    r.lo[2] = std::max(0, icz - half_z);
    r.hi[2] = std::min(nz, icz + half_z);
    r.validate(d);
    return r;
}

dla::LabeledVoxelSet make_test_refs(const dla::LabelVolume& truth, const dla::Roi& roi,
                                    std::uint64_t seed) {
    const dla::Dims3 d = truth.dims();
    dla::BinaryMask vessels(d), bone(d), soft(d);
    for (int z = roi.lo[2]; z < roi.hi[2]; ++z)
        for (int y = roi.lo[1]; y < roi.hi[1]; ++y)
            for (int x = roi.lo[0]; x < roi.hi[0]; ++x) {
                std::size_t i = x + std::size_t(d.nx) * (y + std::size_t(d.ny) * z);
                switch (truth[i]) {
                    case dla::kClassVessel: vessels.set(i, true); break;
                    case dla::kClassBone: bone.set(i, true); break;
                    case dla::kClassSoft: soft.set(i, true); break;
                    default: break;
                }
            }
    return std::move(dla::build_and_undersample(vessels, bone, soft, seed).samples);
}

// key=value strings reproducing cfg's phantom keys with this case's seed and
// motion, so the echoed file regenerates the case via the phantom subcommand
std::vector<std::string> phantom_case_overrides(const dla::Config& cfg,
                                                const dla::PhantomSpec& spec) {
    std::vector<std::string> sets;
    for (const auto& [key, opt] : phantom_schema()) {
        std::string value;
        if (key == "seed")
            value = std::to_string(std::int64_t(spec.seed));  // bit-cast, u64 round-trip
        else if (key == "motion_tx_mm")
            value = g17(spec.motion.tx_mm);
        else if (key == "motion_ty_mm")
            value = g17(spec.motion.ty_mm);
        else if (key == "motion_tz_mm")
            value = g17(spec.motion.tz_mm);
        else if (key == "motion_rot_z_deg")
            value = g17(spec.motion.rot_z_deg);
        else
            value = cfg.get_text(key);
        sets.push_back(key + "=" + value);
    }
    return sets;
}

std::vector<std::string> labelgen_case_overrides(const dla::Config& cfg, std::uint64_t seed) {
    std::vector<std::string> sets;
    for (const auto& [key, opt] : labelgen_schema())
        sets.push_back(key + "=" +
                       (key == "seed" ? std::to_string(std::int64_t(seed)) : cfg.get_text(key)));
    return sets;
}

struct TestCaseRun {
    std::string id;
    dla::PhantomCase pc;
    dla::Roi roi;
    dla::LabeledVoxelSet refs;
    dla::ConfusionTable table;
    dla::CaseMetrics metrics;
    dla::ArtifactReport artifact;
};

void run_end2end(const std::string& cfg_path, const std::string& out_dir,
                 const std::vector<std::string>& sets) {
    dla::Config cfg = make_config(cfg_path, end2end_schema(), sets);
    fs::path out = out_dir;
    fs::create_directories(out);
    cfg.write_resolved(out / "resolved.cfg");

    const std::uint64_t gseed = std::uint64_t(cfg.get_int("seed"));
    const int n_train = int(cfg.get_int("n_train"));
    const int n_val = int(cfg.get_int("n_val"));
    const int n_test = int(cfg.get_int("n_test"));
    if (n_train < 1 || n_val < 1)
        throw dla::ConfigError("end2end: n_train and n_val must be >= 1");
    if (n_test < 2)
        throw dla::ConfigError("end2end: cohort statistics need at least two held-out cases");
    const double shift_vox = cfg.get_real("test_shift_vox");
    const int margin = int(cfg.get_int("roi_margin_vox"));
    const int back = int(cfg.get_int("roi_back_vox"));
    const int half_y = int(cfg.get_int("roi_half_y"));
    const int half_z = int(cfg.get_int("roi_half_z"));
    if (margin < 0 || back < 0 || half_y < 1 || half_z < 1)
        throw dla::ConfigError("end2end: roi window settings out of range");
    const int infer_workers = int(cfg.get_int("infer_workers"));
    const int infer_batch = int(cfg.get_int("infer_batch"));
    if (infer_workers < 1 || infer_batch < 1)
        throw dla::ConfigError("end2end: infer_workers and infer_batch must be >= 1");

    struct TrainCase {
        dla::PhantomCase pc;
        dla::LabelGenResult lg;
    };
    std::vector<TrainCase> train_cases, val_cases;
    std::vector<TestCaseRun> test_cases;

    auto make_case = [&](const std::string& role, int idx) {
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "%s_%03d", role.c_str(), idx);
        const std::string id = idbuf;
        dla::PhantomSpec spec = phantom_from(cfg);
        spec.seed = dla::derive_seed(gseed, "phantom." + id);
        if (role == "test") spec.motion.tx_mm += shift_vox * double(spec.spacing_mm);
        dla::PhantomCase pc = dla::generate_phantom(spec);
        fs::path dir = out / "cases" / id;
        fs::create_directories(dir);
        dla::save_volume(pc.mask, dir / "mask.dlav");
        dla::save_volume(pc.fill, dir / "fill.dlav");
        dla::save_labels(pc.truth, dir / "truth.dlal");
        dla::Config::from_defaults(phantom_schema(), phantom_case_overrides(cfg, spec))
            .write_resolved(dir / "resolved.cfg");
        return std::make_pair(id, std::move(pc));
    };

    for (int i = 0; i < n_train + n_val; ++i) {
        const bool is_train = i < n_train;
        auto [id, pc] = make_case(is_train ? "train" : "val", is_train ? i : i - n_train);
        dla::LabelGenConfig lgc = labelgen_from(cfg);
        lgc.seed = dla::derive_seed(gseed, "labelgen." + id);
        dla::LabelGenResult lg = run_labelgen_pipeline(pc.mask, pc.fill, lgc);
        fs::path dir = out / "cases" / id;
        dla::save_labels(lg.labels, dir / "labels.dlal");
        dla::save_samples(lg.samples, dir / "samples.tsv");
        dla::Config::from_defaults(labelgen_schema(), labelgen_case_overrides(cfg, lgc.seed))
            .write_resolved(dir / "labelgen.cfg");
        std::printf("case %s: %zu vessel samples\n", id.c_str(), lg.samples.n_vessel);
        (is_train ? train_cases : val_cases).push_back({std::move(pc), std::move(lg)});
    }
    for (int i = 0; i < n_test; ++i) {
        auto [id, pc] = make_case("test", i);
        TestCaseRun tc;
        tc.id = id;
        tc.roi = derive_roi(pc.truth, margin, back, half_y, half_z);
        tc.refs = make_test_refs(pc.truth, tc.roi, dla::derive_seed(gseed, "refs." + id));
        fs::path dir = out / "cases" / id;
        dla::save_samples(tc.refs, dir / "refs.tsv");
        std::ofstream roi_os(dir / "roi.txt", std::ios::binary);
        roi_os << roi_text(tc.roi) << '\n';
        if (!roi_os.flush()) throw dla::IoError("short write to roi.txt");
        std::printf("case %s: roi %s (%" PRId64 " voxels, %zu refs)\n", id.c_str(),
                    roi_text(tc.roi).c_str(), tc.roi.voxels(), tc.refs.entries.size());
        tc.pc = std::move(pc);
        test_cases.push_back(std::move(tc));
    }

    dla::Architecture arch = arch_from(cfg);
    dla::TrainConfig tcfg = train_from(cfg);
    tcfg.seed = dla::derive_seed(gseed, "train");
    std::vector<const dla::Volume*> tf, vf;
    std::vector<const dla::LabeledVoxelSet*> ts, vs;
    for (const auto& c : train_cases) {
        tf.push_back(&c.pc.fill);
        ts.push_back(&c.lg.samples);
    }
    for (const auto& c : val_cases) {
        vf.push_back(&c.pc.fill);
        vs.push_back(&c.lg.samples);
    }
    std::printf("training on %zu cases, validating on %zu\n", tf.size(), vf.size());
    auto [params, hist] = dla::train(tcfg, arch, tf, ts, vf, vs);
    dla::save_checkpoint(arch, params, out / "model.dlam");
    dla::save_history(hist, out / "history.tsv");
    std::printf("train: stopped by %s, best val loss %s at iteration %" PRId64 "\n",
                hist.stop_reason.c_str(), g17(hist.best_val_loss).c_str(), hist.best_iteration);

    dla::InferenceEngine engine(arch, params);
    fs::create_directories(out / "infer");
    fs::create_directories(out / "eval");
    std::vector<dla::CaseMetrics> per_case;
    dla::LabelGenConfig report_lgc = labelgen_from(cfg);
    for (auto& tc : test_cases) {
        dla::InferenceResult res =
            dla::classify_volume(engine, tc.pc.fill, tc.roi, infer_workers, infer_batch);
        dla::save_labels(res.labels, out / "infer" / (tc.id + ".labels.dlal"));
        dla::save_volume(dla::make_dla(tc.pc.fill, res.labels),
                         out / "infer" / (tc.id + ".dla.dlav"));
        std::printf("infer %s: throughput_voxels_per_s=%s\n", tc.id.c_str(),
                    g17(res.voxels_per_s).c_str());
        tc.table = dla::confusion(res.labels, tc.refs);
        tc.metrics = dla::metrics_from_table(tc.table);
        write_metrics_tsv(out / "eval" / (tc.id + ".metrics.tsv"), tc.metrics, tc.table);
        tc.artifact =
            write_report_dir(tc.pc, res.labels, report_lgc, tc.id, out / "report" / tc.id);
        per_case.push_back(tc.metrics);
        std::printf("eval %s: dsc=%s accuracy=%s\n", tc.id.c_str(), g17(tc.metrics.dsc).c_str(),
                    g17(tc.metrics.accuracy).c_str());
    }
    write_cohort_tsv(out / "cohort.tsv", per_case);

    std::ofstream os(out / "summary.tsv", std::ios::binary);
    if (!os) throw dla::IoError("cannot write summary.tsv");
    os << "case\troi\ttp\tfp\tfn\ttn\tsensitivity\tppv\tdsc\taccuracy"
          "\tresidual_bone_voxels_dsa\tresidual_bone_voxels_dla\tratio\tratio_defined\n";
    for (const auto& tc : test_cases) {
        os << tc.id << '\t' << roi_text(tc.roi) << '\t' << tc.table.tp << '\t' << tc.table.fp
           << '\t' << tc.table.fn << '\t' << tc.table.tn << '\t' << g17(tc.metrics.sensitivity)
           << '\t' << g17(tc.metrics.ppv) << '\t' << g17(tc.metrics.dsc) << '\t'
           << g17(tc.metrics.accuracy) << '\t' << tc.artifact.residual_bone_voxels_dsa << '\t'
           << tc.artifact.residual_bone_voxels_dla << '\t' << g17(tc.artifact.ratio) << '\t'
           << int(tc.artifact.ratio_defined) << '\n';
    }
    if (!os.flush()) throw dla::IoError("short write to summary.tsv");
    std::printf("end2end: summary at %s\n", (out / "summary.tsv").string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
    std::setvbuf(stdout, nullptr, _IOLBF, 0);  // timely progress under redirection
    CLI::App app{"mask-free cranial angiography pipeline"};
    app.set_version_flag("--version", "dla 1.0.0");
    app.require_subcommand(1);

    std::string ph_spec, ph_out;
    std::vector<std::string> ph_sets;
    auto* ph = app.add_subcommand("phantom", "generate a synthetic acquisition case");
    ph->add_option("--spec", ph_spec, "phantom config file");
    ph->add_option("--out-dir", ph_out, "case output directory")->required();
    ph->add_option("--set", ph_sets, "key=value override");

    std::string lg_case, lg_cfg;
    std::vector<std::string> lg_sets;
    auto* lg = app.add_subcommand("labelgen", "derive tissue labels from a case");
    lg->add_option("--case-dir", lg_case, "case directory with mask/fill volumes")->required();
    lg->add_option("--config", lg_cfg, "label generation config file");
    lg->add_option("--set", lg_sets, "key=value override");

    std::string tr_cfg, tr_data, tr_out;
    std::vector<std::string> tr_sets;
    auto* tr = app.add_subcommand("train", "train the voxel classifier");
    tr->add_option("--config", tr_cfg, "training config file");
    tr->add_option("--data", tr_data, "directory of train_*/val_* case subdirectories")
        ->required();
    tr->add_option("--out", tr_out, "checkpoint output path")->required();
    tr->add_option("--set", tr_sets, "key=value override");

    std::string in_model, in_fill, in_roi, in_labels, in_dla;
    int in_workers = 1, in_batch = 512;
    auto* in = app.add_subcommand("infer", "classify voxels and write the angiogram");
    in->add_option("--model", in_model, "model checkpoint")->required();
    in->add_option("--fill", in_fill, "contrast volume (.dlav)")->required();
    in->add_option("--roi", in_roi, "x0,x1,y0,y1,z0,z1 evaluation window");
    in->add_option("--out-labels", in_labels, "label volume output path")->required();
    in->add_option("--out-dla", in_dla, "vessels-only volume output path");
    in->add_option("--workers", in_workers, "worker threads");
    in->add_option("--batch", in_batch, "voxels per work batch");

    std::string ev_pred, ev_truth, ev_out;
    auto* ev = app.add_subcommand("eval", "score predicted labels against references");
    ev->add_option("--pred", ev_pred, "predicted label volume (.dlal)")->required();
    ev->add_option("--truth", ev_truth, "reference samples (.tsv)")->required();
    ev->add_option("--out", ev_out, "metrics TSV output path");

    std::string co_cases, co_out;
    auto* co = app.add_subcommand("cohort", "aggregate per-case metrics files");
    co->add_option("--cases", co_cases, "directory of *.metrics.tsv files")->required();
    co->add_option("--out", co_out, "cohort table output path");

    std::string rp_case, rp_model, rp_out, rp_roi, rp_cfg;
    int rp_workers = 1, rp_batch = 512;
    std::vector<std::string> rp_sets;
    auto* rp = app.add_subcommand("report", "render projections and the artifact table");
    rp->add_option("--case-dir", rp_case, "case directory")->required();
    rp->add_option("--model", rp_model, "model checkpoint")->required();
    rp->add_option("--out", rp_out, "report output directory")->required();
    rp->add_option("--roi", rp_roi, "x0,x1,y0,y1,z0,z1 evaluation window");
    rp->add_option("--workers", rp_workers, "worker threads");
    rp->add_option("--batch", rp_batch, "voxels per work batch");
    rp->add_option("--config", rp_cfg, "label generation config file");
    rp->add_option("--set", rp_sets, "key=value override");

    std::string ee_cfg, ee_out;
    std::vector<std::string> ee_sets;
    auto* ee = app.add_subcommand("end2end", "run the whole pipeline on synthetic cases");
    ee->add_option("--config", ee_cfg, "end-to-end config file");
    ee->add_option("--out", ee_out, "run output directory")->required();
    ee->add_option("--set", ee_sets, "key=value override");

    ph->callback([&] { run_phantom(ph_spec, ph_out, ph_sets); });
    lg->callback([&] { run_labelgen(lg_case, lg_cfg, lg_sets); });
    tr->callback([&] { run_train(tr_cfg, tr_data, tr_out, tr_sets); });
    in->callback([&] { run_infer(in_model, in_fill, in_roi, in_labels, in_dla, in_workers,
                                 in_batch); });
    ev->callback([&] { run_eval(ev_pred, ev_truth, ev_out); });
    co->callback([&] { run_cohort(co_cases, co_out); });
    rp->callback([&] { run_report(rp_case, rp_model, rp_out, rp_roi, rp_workers, rp_batch,
                                  rp_cfg, rp_sets); });
    ee->callback([&] { run_end2end(ee_cfg, ee_out, ee_sets); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const dla::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const dla::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const dla::NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
