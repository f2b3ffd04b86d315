#include "dcsam/dcst.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dcsam/errors.hpp"

namespace dcsam {
namespace {

constexpr unsigned char kMagic[4] = {'D', 'C', 'S', 'T'};
constexpr unsigned char kVersion = 0x01;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<unsigned char>& in, std::size_t at)
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<unsigned char> encode_dcst(const Tensor& t)
{
    require_finite(t, "encode_dcst");
    if (t.rank() == 0 || t.rank() > 255) throw ShapeMismatch("dcst rank must be 1..255");
    std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
    out.push_back(kVersion);
    out.push_back(static_cast<unsigned char>(t.rank()));
    for (std::size_t d : t.shape()) {
        if (d > UINT32_MAX) throw ShapeMismatch("dimension does not fit in u32");
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    out.reserve(out.size() + 4 * t.size());
    for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

Tensor decode_dcst(const std::vector<unsigned char>& bytes)
{
    if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw IoError("not a dcst file (bad magic)");
    if (bytes[4] != kVersion) throw IoError("unsupported dcst version " + std::to_string(bytes[4]));
    const std::size_t rank = bytes[5];
    if (rank == 0) throw IoError("dcst rank 0");
    if (bytes.size() < 6 + 4 * rank) throw IoError("truncated dcst header");
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i) shape[i] = get_u32(bytes, 6 + 4 * i);
    const std::size_t count = shape_size(shape);
    const std::size_t offset = 6 + 4 * rank;
    if (bytes.size() != offset + 4 * count)
        throw IoError("dcst payload length mismatch for shape " + shape_string(shape));
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i)
        data[i] = std::bit_cast<float>(get_u32(bytes, offset + 4 * i));
    Tensor t(std::move(shape), std::move(data));
    if (!is_finite(t)) throw IoError("dcst payload contains non-finite values");
    return t;
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
{
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents)
{
    write_file_atomic(path, std::vector<unsigned char>(contents.begin(), contents.end()));
}

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_dcst(const std::filesystem::path& path, const Tensor& t)
{
    write_file_atomic(path, encode_dcst(t));
}

Tensor read_dcst(const std::filesystem::path& path)
{
    const std::string raw = read_text_file(path);
    return decode_dcst(std::vector<unsigned char>(raw.begin(), raw.end()));
}

}  // namespace dcsam
