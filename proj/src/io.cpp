#include "dyno/io.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dyno {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.append(b, 8);
}

void put_f32(std::string& out, const Tensor& t) {
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const float f = static_cast<float>(t[i]);
        char b[4];
        std::memcpy(b, &f, 4);
        out.append(b, 4);
    }
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, bytes_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v;
        std::memcpy(&v, bytes_.data() + pos_, 8);
        pos_ += 8;
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Tensor f32_tensor(std::vector<int> shape) {
        const std::int64_t n = Tensor::count(shape);
        need(static_cast<std::size_t>(n) * 4);
        Tensor t(std::move(shape));
        for (std::int64_t i = 0; i < n; ++i) {
            float f;
            std::memcpy(&f, bytes_.data() + pos_, 4);
            pos_ += 4;
            t[i] = static_cast<double>(f);
        }
        return t;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("container truncated");
    }
    std::string bytes_;
    std::size_t pos_ = 0;
};

void write_binary_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + tmp + " for writing");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw std::runtime_error("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string read_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& path) {
    std::string out;
    out.append("DYNO", 4);
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(dataset.episodes.size()));
    for (const Episode& ep : dataset.episodes) {
        put_u32(out, static_cast<std::uint32_t>(ep.condition.observation.size()));
        put_f32(out, ep.condition.observation);
        put_u32(out, static_cast<std::uint32_t>(ep.condition.instruction.size()));
        put_f32(out, ep.condition.instruction);
        put_u32(out, static_cast<std::uint32_t>(ep.condition.mode));
        const auto& lshape = ep.expert_latent.shape();
        put_u32(out, static_cast<std::uint32_t>(lshape.size()));
        for (int d : lshape) put_u32(out, static_cast<std::uint32_t>(d));
        put_f32(out, ep.expert_latent);
        put_u32(out, static_cast<std::uint32_t>(ep.expert_actions.dim(0)));
        put_u32(out, static_cast<std::uint32_t>(ep.expert_actions.dim(1)));
        put_f32(out, ep.expert_actions);
    }
    write_binary_atomic(path, out);
}

Dataset load_dataset(const std::string& path) {
    Reader r(read_binary(path));
    if (r.str(4) != "DYNO") throw std::runtime_error(path + ": not a dataset container");
    const std::uint32_t version = r.u32();
    if (version != 1) throw std::runtime_error(path + ": unsupported dataset version");
    const std::uint32_t count = r.u32();
    Dataset ds;
    for (std::uint32_t i = 0; i < count; ++i) {
        Episode ep;
        const int obs_len = static_cast<int>(r.u32());
        ep.condition.observation = r.f32_tensor({obs_len});
        const int instr_len = static_cast<int>(r.u32());
        ep.condition.instruction = r.f32_tensor({instr_len});
        ep.condition.mode = static_cast<int>(r.u32());
        const int ndim = static_cast<int>(r.u32());
        std::vector<int> lshape;
        for (int d = 0; d < ndim; ++d) lshape.push_back(static_cast<int>(r.u32()));
        ep.expert_latent = r.f32_tensor(std::move(lshape));
        const int horizon = static_cast<int>(r.u32());
        const int adim = static_cast<int>(r.u32());
        ep.expert_actions = r.f32_tensor({horizon, adim});
        ds.episodes.push_back(std::move(ep));
    }
    if (!r.done()) throw std::runtime_error(path + ": trailing bytes");
    if (!ds.episodes.empty()) {
        const Episode& e0 = ds.episodes.front();
        ds.config.frames = e0.expert_latent.dim(0);
        ds.config.frame_size = 2 * e0.expert_latent.dim(2);
        ds.config.modes = static_cast<int>(e0.condition.instruction.size());
        ds.config.horizon = e0.expert_actions.dim(0);
        ds.config.action_dim = e0.expert_actions.dim(1);
    }
    return ds;
}

nlohmann::json dataset_to_json(const Dataset& dataset) {
    nlohmann::json j;
    j["version"] = 1;
    j["episode_count"] = dataset.episodes.size();
    nlohmann::json eps = nlohmann::json::array();
    for (const Episode& ep : dataset.episodes) {
        nlohmann::json e;
        e["mode"] = ep.condition.mode;
        e["observation"] = ep.condition.observation.raw();
        e["instruction"] = ep.condition.instruction.raw();
        e["latent_shape"] = ep.expert_latent.shape();
        e["latent"] = ep.expert_latent.raw();
        e["actions_shape"] = ep.expert_actions.shape();
        e["actions"] = ep.expert_actions.raw();
        eps.push_back(std::move(e));
    }
    j["episodes"] = std::move(eps);
    return j;
}

nlohmann::json trajectory_to_json(const DenoiseTrajectory& traj) {
    nlohmann::json j;
    j["schedule"] = traj.sigmas;
    j["latent_norms"] = traj.latent_norms;
    j["step_stochastic"] = std::vector<bool>(traj.step_stochastic.begin(), traj.step_stochastic.end());
    nlohmann::json steps = nlohmann::json::array();
    for (const StochasticStep& s : traj.stochastic)
        steps.push_back({{"position", s.position},
                         {"sigma_i", s.sigma_i},
                         {"sigma_im1", s.sigma_im1},
                         {"sigma_up", s.sigma_up}});
    j["stochastic_steps"] = std::move(steps);
    if (!traj.stochastic.empty()) j["first_transition_std"] = traj.stochastic.front().sigma_up;
    j["mode"] = traj.condition.mode;
    return j;
}

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const std::string& component, const nlohmann::json& descriptor) {
    std::string out;
    out.append("DYNP", 4);
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(component.size()));
    out.append(component);
    put_u32(out, static_cast<std::uint32_t>(params.entries().size()));
    std::uint64_t offset = 0;
    for (const ParamEntry& e : params.entries()) {
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.append(e.name);
        put_u32(out, 0);  // dtype f32
        put_u32(out, static_cast<std::uint32_t>(e.value.shape().size()));
        for (int d : e.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        put_u64(out, offset);
        offset += static_cast<std::uint64_t>(e.value.size()) * 4;
    }
    put_u64(out, offset);
    for (const ParamEntry& e : params.entries()) put_f32(out, e.value);
    write_binary_atomic(path, out);

    nlohmann::json side = descriptor;
    side["component"] = component;
    side["format"] = "DYNP.v1";
    write_text_atomic(path + ".json", side.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(read_binary(path));
    if (r.str(4) != "DYNP") throw std::runtime_error(path + ": not a checkpoint container");
    if (r.u32() != 1) throw std::runtime_error(path + ": unsupported checkpoint version");
    Checkpoint ck;
    ck.component = r.str(r.u32());
    const std::uint32_t n = r.u32();
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::uint64_t offset;
    };
    std::vector<Entry> entries;
    for (std::uint32_t i = 0; i < n; ++i) {
        Entry e;
        e.name = r.str(r.u32());
        if (r.u32() != 0) throw std::runtime_error(path + ": unsupported dtype");
        const std::uint32_t ndim = r.u32();
        for (std::uint32_t d = 0; d < ndim; ++d) e.shape.push_back(static_cast<int>(r.u32()));
        e.offset = r.u64();
        entries.push_back(std::move(e));
    }
    const std::uint64_t payload = r.u64();
    std::uint64_t expect = 0;
    for (const Entry& e : entries) {
        if (e.offset != expect) throw std::runtime_error(path + ": bad manifest offsets");
        expect += static_cast<std::uint64_t>(Tensor::count(e.shape)) * 4;
    }
    if (expect != payload) throw std::runtime_error(path + ": payload size mismatch");
    for (Entry& e : entries) ck.params.add(e.name, r.f32_tensor(std::move(e.shape)));
    if (!r.done()) throw std::runtime_error(path + ": trailing bytes");

    std::ifstream side(path + ".json");
    if (side) ck.descriptor = nlohmann::json::parse(side);
    return ck;
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::string file_hash(const std::string& path) { return content_hash(read_binary(path)); }

std::string wallclock_masked(const std::string& path) {
    std::string text = read_binary(path);
    const std::string ext = std::filesystem::path(path).extension().string();
    if (ext == ".json") {
        auto j = nlohmann::json::parse(text, nullptr, false);
        if (!j.is_discarded() && j.contains("wallclock_s")) {
            j.erase("wallclock_s");
            return j.dump();
        }
        return text;
    }
    if (ext == ".csv") {
        std::istringstream in(text);
        std::string line, out;
        int wall_col = -1;
        bool first = true;
        while (std::getline(in, line)) {
            std::vector<std::string> cells;
            std::istringstream ls(line);
            std::string cell;
            while (std::getline(ls, cell, ',')) cells.push_back(cell);
            if (first) {
                for (std::size_t i = 0; i < cells.size(); ++i)
                    if (cells[i] == "wallclock_s") wall_col = static_cast<int>(i);
                first = false;
            } else if (wall_col >= 0 && static_cast<int>(cells.size()) > wall_col) {
                cells[static_cast<std::size_t>(wall_col)] = "-";
            }
            for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
            out += "\n";
        }
        return out;
    }
    return text;
}

void write_text_atomic(const std::string& path, const std::string& content) {
    write_binary_atomic(path, content);
}

std::string read_text(const std::string& path) { return read_binary(path); }

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& columns)
    : path_(path), columns_(columns.size()) {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) buffer_ += ",";
        buffer_ += columns[i];
    }
    buffer_ += "\n";
}

void CsvWriter::row(const std::vector<double>& values) {
    if (values.size() != columns_) throw std::invalid_argument("CsvWriter: column count mismatch");
    char buf[64];
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) buffer_ += ",";
        std::snprintf(buf, sizeof(buf), "%.12g", values[i]);
        buffer_ += buf;
    }
    buffer_ += "\n";
}

void CsvWriter::close() {
    if (!path_.empty()) write_binary_atomic(path_, buffer_);
}

CsvTable read_csv(const std::string& path) {
    std::istringstream in(read_binary(path));
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty csv");
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.columns.push_back(cell);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream rs(line);
        std::vector<double> row;
        while (std::getline(rs, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != t.columns.size()) throw std::runtime_error(path + ": ragged csv row");
        t.rows.push_back(std::move(row));
    }
    return t;
}

int CsvTable::column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("csv: no column named " + name);
}

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<SvgSeries>& series) {
    const int w = 720, h = 420, ml = 70, mr = 20, mt = 40, mb = 50;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double yspan = ymax - ymin;
    ymin -= 0.05 * yspan;
    ymax += 0.05 * yspan;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
           "font-family=\"sans-serif\">" << title << "</text>\n";
    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
        << h - mb << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n";
    char buf[64];
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        std::snprintf(buf, sizeof(buf), "%.4g", xv);
        svg << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 18
            << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << buf
            << "</text>\n";
        std::snprintf(buf, sizeof(buf), "%.4g", yv);
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 4
            << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << buf
            << "</text>\n";
        svg << "<line x1=\"" << ml << "\" y1=\"" << py(yv) << "\" x2=\"" << w - mr << "\" y2=\""
            << py(yv) << "\" stroke=\"#dddddd\"/>\n";
    }
    svg << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12
        << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << x_label
        << "</text>\n";
    svg << "<text x=\"16\" y=\"" << (mt + h - mb) / 2
        << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
           "transform=\"rotate(-90 16 " << (mt + h - mb) / 2 << ")\">" << y_label << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        svg << "<polyline fill=\"none\" stroke=\"" << colors[si % 5]
            << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            svg << px(s.x[i]) << "," << py(s.y[i]) << " ";
        svg << "\"/>\n";
        svg << "<text x=\"" << w - mr - 8 << "\" y=\"" << mt + 16 + 16 * static_cast<int>(si)
            << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << colors[si % 5]
            << "\" font-family=\"sans-serif\">" << s.label << "</text>\n";
    }
    svg << "</svg>\n";
    write_text_atomic(path, svg.str());
}

}  // namespace dyno
