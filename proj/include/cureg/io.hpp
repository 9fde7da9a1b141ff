#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cureg/image.hpp"

// Container file: a short text header followed by the raw payload.
//
//   CUREG-CONTAINER 1
//   kind volume                 (or: frame)
//   dtype float32-le
//   order z-major x-fastest
//   shape 128 128 32            (x y z counts; frames list width height)
//   spacing 0.62 0.62 0.62      (mm, same axis order)
//   center 0 0 0                (mm, physical grid center)
//   end
//   <product(shape) * 4 bytes, little-endian IEEE-754 binary32>

namespace cureg {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kContainerVersion = 1;

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return os.str();
}

inline void put_f32le(std::ostream& os, float v) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    char buf[4];
    std::memcpy(buf, &bits, 4);
    os.write(buf, 4);
}

inline float get_f32le(const char* p) {
    std::uint32_t bits;
    std::memcpy(&bits, p, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    return std::bit_cast<float>(bits);
}

template <int Rank>
void write_container(const std::filesystem::path& path, const Image<Rank>& img) {
    img.spec.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    const GridSpec& g = img.spec;
    os << "CUREG-CONTAINER " << kContainerVersion << "\n";
    os << "kind " << (Rank == 3 ? "volume" : "frame") << "\n";
    os << "dtype float32-le\n";
    os << "order z-major x-fastest\n";
    if (Rank == 3) {
        os << "shape " << g.nx() << " " << g.ny() << " " << g.nz() << "\n";
        os << "spacing " << fmt_double(g.spacing[0]) << " " << fmt_double(g.spacing[1]) << " "
           << fmt_double(g.spacing[2]) << "\n";
    } else {
        os << "shape " << g.nx() << " " << g.ny() << "\n";
        os << "spacing " << fmt_double(g.spacing[0]) << " " << fmt_double(g.spacing[1]) << "\n";
    }
    os << "center " << fmt_double(g.center.x()) << " " << fmt_double(g.center.y()) << " " << fmt_double(g.center.z())
       << "\n";
    os << "end\n";
    for (float v : img.data) put_f32le(os, v);
    if (!os) throw IoError("write failed for " + path.string());
}

template <int Rank>
Image<Rank> read_container(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    auto fail = [&](const std::string& why) { return IoError(path.string() + ": " + why); };

    std::string line;
    if (!std::getline(is, line)) throw fail("empty file");
    {
        std::istringstream ls(line);
        std::string magic;
        int version = 0;
        if (!(ls >> magic >> version) || magic != "CUREG-CONTAINER") throw fail("not a container file");
        if (version != kContainerVersion) throw fail("unsupported container version " + std::to_string(version));
    }
    GridSpec g;
    g.rank = Rank;
    bool have_kind = false, have_shape = false, have_spacing = false, have_center = false, have_dtype = false;
    while (true) {
        if (!std::getline(is, line)) throw fail("truncated header");
        if (line == "end") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "kind") {
            std::string kind;
            ls >> kind;
            if (kind != (Rank == 3 ? "volume" : "frame")) throw fail("expected a " + std::string(Rank == 3 ? "volume" : "frame") + ", found '" + kind + "'");
            have_kind = true;
        } else if (key == "dtype") {
            std::string dt;
            ls >> dt;
            if (dt != "float32-le") throw fail("unsupported dtype '" + dt + "'");
            have_dtype = true;
        } else if (key == "order") {
        } else if (key == "shape") {
            for (int a = 0; a < Rank; ++a)
                if (!(ls >> g.shape[a])) throw fail("bad shape line");
            have_shape = true;
        } else if (key == "spacing") {
            for (int a = 0; a < Rank; ++a)
                if (!(ls >> g.spacing[a])) throw fail("bad spacing line");
            have_spacing = true;
        } else if (key == "center") {
            for (int a = 0; a < 3; ++a)
                if (!(ls >> g.center[a])) throw fail("bad center line");
            have_center = true;
        } else {
            throw fail("unknown header key '" + key + "'");
        }
    }
    if (!(have_kind && have_shape && have_spacing && have_center && have_dtype)) throw fail("incomplete header");
    try {
        g.validate();
    } catch (const std::invalid_argument& e) {
        throw fail(e.what());
    }
    const std::size_t n = g.size();
    std::string payload(n * 4, '\0');
    is.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (static_cast<std::size_t>(is.gcount()) != payload.size())
        throw fail("payload has " + std::to_string(is.gcount()) + " bytes, expected " + std::to_string(payload.size()));
    if (is.peek() != std::char_traits<char>::eof()) throw fail("trailing bytes after payload");
    Image<Rank> img(g);
    for (std::size_t i = 0; i < n; ++i) img.data[i] = get_f32le(payload.data() + 4 * i);
    return img;
}

}  // namespace detail

inline void write_volume(const std::filesystem::path& p, const Volume& v) { detail::write_container(p, v); }
inline void write_frame(const std::filesystem::path& p, const Frame& f) { detail::write_container(p, f); }
inline Volume read_volume(const std::filesystem::path& p) { return detail::read_container<3>(p); }
inline Frame read_frame(const std::filesystem::path& p) { return detail::read_container<2>(p); }

}  // namespace cureg
