#include "plus/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "plus/digest.hpp"

namespace plus::ck {

namespace {
constexpr const char* kMagic = "PLUSCKPT v1";

void append_f32_le(std::string& out, const std::vector<float>& v) {
    static_assert(sizeof(float) == 4);
    size_t base = out.size();
    out.resize(base + v.size() * 4);
    for (float f : v) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        out[base++] = static_cast<char>(u & 0xff);
        out[base++] = static_cast<char>((u >> 8) & 0xff);
        out[base++] = static_cast<char>((u >> 16) & 0xff);
        out[base++] = static_cast<char>((u >> 24) & 0xff);
    }
}
}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_digest,
                     const std::vector<NamedTensor>& tensors) {
    std::string body = std::string(kMagic) + " " + config_digest + "\n";
    for (const auto& nt : tensors) {
        if (nt.name.find_first_of(" \n") != std::string::npos)
            throw DataError("checkpoint: bad tensor name '" + nt.name + "'");
        body += "tensor " + nt.name + " " + std::to_string(nt.value.shape.size());
        for (int d : nt.value.shape) body += " " + std::to_string(d);
        body += "\n";
        append_f32_le(body, nt.value.data);
    }
    std::string hex = sha256_hex(body);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot open " + path + " for writing");
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    f << "sha256 " << hex << "\n";
    if (!f) throw DataError("checkpoint: write failed for " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path, const std::string& expect_digest) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open " + path);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    // split off the trailing "sha256 <hex>\n" line
    const std::string tag = "sha256 ";
    if (raw.size() < tag.size() + 65 || raw.back() != '\n')
        throw DataError("checkpoint: truncated file " + path);
    size_t tail = raw.rfind(tag);
    if (tail == std::string::npos || raw.size() - tail != tag.size() + 65)
        throw DataError("checkpoint: missing digest line in " + path);
    std::string stored = raw.substr(tail + tag.size(), 64);
    std::string body = raw.substr(0, tail);
    if (sha256_hex(body) != stored) throw DigestError("checkpoint: digest mismatch in " + path);

    size_t pos = body.find('\n');
    if (pos == std::string::npos) throw DataError("checkpoint: missing header in " + path);
    std::istringstream hdr(body.substr(0, pos));
    std::string m1, m2, dig;
    hdr >> m1 >> m2 >> dig;
    if (m1 + " " + m2 != kMagic) throw DataError("checkpoint: bad magic in " + path);
    if (!expect_digest.empty() && dig != expect_digest)
        throw DigestError("checkpoint: config digest mismatch (file " + dig + ", expected " + expect_digest + ")");
    ++pos;

    std::vector<NamedTensor> out;
    while (pos < body.size()) {
        size_t eol = body.find('\n', pos);
        if (eol == std::string::npos) throw DataError("checkpoint: truncated block header in " + path);
        std::istringstream line(body.substr(pos, eol - pos));
        std::string kw, name;
        int nd = -1;
        line >> kw >> name >> nd;
        if (kw != "tensor" || nd < 0 || nd > 2) throw DataError("checkpoint: bad block header in " + path);
        std::vector<int> shape(static_cast<size_t>(nd));
        std::int64_t n = 1;
        for (int& d : shape) {
            if (!(line >> d) || d <= 0) throw DataError("checkpoint: bad shape in " + path);
            n *= d;
        }
        pos = eol + 1;
        if (pos + static_cast<size_t>(n) * 4 > body.size())
            throw DataError("checkpoint: truncated tensor data in " + path);
        std::vector<float> data(static_cast<size_t>(n));
        for (auto& fl : data) {
            std::uint32_t u = static_cast<unsigned char>(body[pos]) |
                              (static_cast<std::uint32_t>(static_cast<unsigned char>(body[pos + 1])) << 8) |
                              (static_cast<std::uint32_t>(static_cast<unsigned char>(body[pos + 2])) << 16) |
                              (static_cast<std::uint32_t>(static_cast<unsigned char>(body[pos + 3])) << 24);
            std::memcpy(&fl, &u, 4);
            pos += 4;
        }
        out.push_back({name, Tensor(std::move(shape), std::move(data))});
    }
    return out;
}

std::vector<NamedTensor> snapshot(const ParamSet& ps) {
    std::vector<NamedTensor> out;
    out.reserve(ps.items.size());
    for (const auto& p : ps.items) out.push_back({p->name, p->value});
    return out;
}

void restore(ParamSet& ps, const std::vector<NamedTensor>& tensors) {
    for (auto& p : ps.items) {
        const NamedTensor* found = nullptr;
        for (const auto& nt : tensors)
            if (nt.name == p->name) {
                found = &nt;
                break;
            }
        if (!found) throw DataError("checkpoint: missing parameter " + p->name);
        if (!found->value.same_shape(p->value))
            throw ShapeError("checkpoint: shape mismatch for " + p->name + ": file " + shape_str(found->value.shape) +
                             " vs model " + shape_str(p->value.shape));
        p->value.data = found->value.data;
    }
}

}  // namespace plus::ck
