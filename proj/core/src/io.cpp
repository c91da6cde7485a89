#include "stepscat/io.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "stepscat/errors.hpp"

namespace stepscat {

namespace {

using nlohmann::json;

std::string num(double v) { return fmt::format("{:.17g}", v); }

double get_real(const json& j, const char* key) {
    if (!j.contains(key)) throw InvalidInput(fmt::format("missing field \"{}\"", key));
    const json& v = j.at(key);
    if (!v.is_number()) throw InvalidInput(fmt::format("field \"{}\" must be a number", key));
    return v.get<double>();
}

std::vector<double> get_reals(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_array())
        throw InvalidInput(fmt::format("field \"{}\" must be an array of numbers", key));
    std::vector<double> out;
    for (const json& v : j.at(key)) {
        if (!v.is_number()) throw InvalidInput(fmt::format("field \"{}\" must hold numbers", key));
        out.push_back(v.get<double>());
    }
    return out;
}

json parse(std::string_view text) {
    try {
        return json::parse(text.begin(), text.end());
    } catch (const json::exception& e) {
        throw InvalidInput(fmt::format("malformed JSON: {}", e.what()));
    }
}

Deviation deviation_from_json(const json& j) {
    if (!j.is_object()) throw InvalidInput("deviation must be an object");
    if (!j.contains("kind") || !j.at("kind").is_string())
        throw InvalidInput("deviation needs a string \"kind\"");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "none") return deviation::None{};
    if (kind == "square")
        return deviation::Square{get_real(j, "x0"), get_real(j, "width"), get_real(j, "height")};
    if (kind == "gaussian")
        return deviation::Gaussian{get_real(j, "amplitude"), get_real(j, "center"),
                                   get_real(j, "width")};
    if (kind == "exp_tail") return deviation::ExpTail{get_real(j, "amplitude"), get_real(j, "rate")};
    if (kind == "tabulated") return deviation::Tabulated{get_reals(j, "x"), get_reals(j, "values")};
    throw InvalidInput(fmt::format("unknown deviation kind \"{}\"", kind));
}

std::string reals(const std::vector<double>& v) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + num(v[i]);
    return out + "]";
}

struct DeviationWriter {
    std::string operator()(const deviation::None&) const { return R"({"kind": "none"})"; }
    std::string operator()(const deviation::Square& d) const {
        return fmt::format(R"({{"kind": "square", "x0": {}, "width": {}, "height": {}}})", num(d.x0),
                           num(d.width), num(d.height));
    }
    std::string operator()(const deviation::Gaussian& d) const {
        return fmt::format(R"({{"kind": "gaussian", "amplitude": {}, "center": {}, "width": {}}})",
                           num(d.amplitude), num(d.center), num(d.width));
    }
    std::string operator()(const deviation::ExpTail& d) const {
        return fmt::format(R"({{"kind": "exp_tail", "amplitude": {}, "rate": {}}})", num(d.amplitude),
                           num(d.rate));
    }
    std::string operator()(const deviation::Tabulated& d) const {
        return fmt::format(R"({{"kind": "tabulated", "x": {}, "values": {}}})", reals(d.x),
                           reals(d.values));
    }
};

std::string matrix_rows(const Eigen::MatrixXcd& S, bool imag) {
    std::string out = "[";
    for (Eigen::Index r = 0; r < S.rows(); ++r) {
        out += r ? ", [" : "[";
        for (Eigen::Index c = 0; c < S.cols(); ++c)
            out += (c ? ", " : "") + num(imag ? S(r, c).imag() : S(r, c).real());
        out += "]";
    }
    return out + "]";
}

Eigen::MatrixXcd matrix_from_json(const json& re, const json& im) {
    auto rows = [](const json& m) {
        if (!m.is_array() || m.empty()) throw InvalidInput("S_re/S_im must be non-empty arrays");
        return static_cast<Eigen::Index>(m.size());
    };
    const Eigen::Index n = rows(re);
    if (rows(im) != n) throw InvalidInput("S_re and S_im differ in shape");
    Eigen::MatrixXcd S(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const json& rr = re.at(static_cast<std::size_t>(r));
        const json& ri = im.at(static_cast<std::size_t>(r));
        if (!rr.is_array() || !ri.is_array() || static_cast<Eigen::Index>(rr.size()) != n ||
            static_cast<Eigen::Index>(ri.size()) != n)
            throw InvalidInput("S sample must be a square matrix");
        for (Eigen::Index c = 0; c < n; ++c) {
            const json& a = rr.at(static_cast<std::size_t>(c));
            const json& b = ri.at(static_cast<std::size_t>(c));
            if (!a.is_number() || !b.is_number()) throw InvalidInput("S entries must be numbers");
            S(r, c) = {a.get<double>(), b.get<double>()};
        }
    }
    return S;
}

}  // namespace

Potential potential_from_json(std::string_view text) {
    const json j = parse(text);
    if (!j.is_object()) throw InvalidInput("potential must be a JSON object");
    Deviation dev = deviation::None{};
    if (j.contains("deviation")) dev = deviation_from_json(j.at("deviation"));
    return Potential(get_real(j, "a_minus"), get_real(j, "a_plus"), std::move(dev));
}

std::string potential_to_json(const Potential& p) {
    return fmt::format(R"({{"a_minus": {}, "a_plus": {}, "deviation": {}}})", num(p.a_minus()),
                       num(p.a_plus()), std::visit(DeviationWriter{}, p.deviation()));
}

std::string scattering_data_to_json(const ScatteringData& d) {
    std::string out = "{\n";
    out += fmt::format("  \"a_minus\": {},\n  \"a_plus\": {},\n", num(d.a_minus), num(d.a_plus));
    out += "  \"bound_states\": [";
    for (std::size_t i = 0; i < d.bound_states.size(); ++i)
        out += fmt::format("{}\n    {{\"mu\": {}, \"N\": {}}}", i ? "," : "",
                           num(d.bound_states[i].mu), num(d.bound_states[i].norming));
    out += d.bound_states.empty() ? "],\n" : "\n  ],\n";
    out += "  \"bands\": [";
    for (std::size_t b = 0; b < d.bands.size(); ++b) {
        const Band& band = d.bands[b];
        out += fmt::format("{}\n    {{\n      \"interval\": [{}, {}],\n      \"samples\": [", b ? "," : "",
                           num(band.interval.lo), num(band.interval.hi));
        for (std::size_t i = 0; i < band.samples.size(); ++i) {
            const SSample& s = band.samples[i];
            out += fmt::format("{}\n        {{\"mu\": {}, \"S_re\": {}, \"S_im\": {}}}", i ? "," : "",
                               num(s.mu), matrix_rows(s.S, false), matrix_rows(s.S, true));
        }
        out += band.samples.empty() ? "]\n    }" : "\n      ]\n    }";
    }
    out += "\n  ]\n}\n";
    return out;
}

ScatteringData scattering_data_from_json(std::string_view text) {
    const json j = parse(text);
    if (!j.is_object()) throw InvalidInput("scattering data must be a JSON object");
    ScatteringData d;
    d.a_minus = get_real(j, "a_minus");
    d.a_plus = get_real(j, "a_plus");
    if (j.contains("bound_states")) {
        if (!j.at("bound_states").is_array()) throw InvalidInput("bound_states must be an array");
        for (const json& b : j.at("bound_states")) d.bound_states.push_back({get_real(b, "mu"), get_real(b, "N")});
    }
    if (!j.contains("bands") || !j.at("bands").is_array() || j.at("bands").size() != 2)
        throw InvalidInput("bands must be an array of two band objects");
    for (std::size_t b = 0; b < 2; ++b) {
        const json& band = j.at("bands").at(b);
        const std::vector<double> iv = get_reals(band, "interval");
        if (iv.size() != 2) throw InvalidInput("band interval must have two entries");
        d.bands[b].interval = {iv[0], iv[1]};
        if (!band.contains("samples") || !band.at("samples").is_array())
            throw InvalidInput("band samples must be an array");
        for (const json& s : band.at("samples")) {
            if (!s.contains("S_re") || !s.contains("S_im")) throw InvalidInput("sample needs S_re and S_im");
            d.bands[b].samples.push_back({get_real(s, "mu"), matrix_from_json(s.at("S_re"), s.at("S_im"))});
        }
    }
    return d;
}

std::string s_table_csv(const ScatteringData& d) {
    std::string out = "mu,band,S_re_11,S_im_11,S_re_12,S_im_12,S_re_21,S_im_21,S_re_22,S_im_22\n";
    for (std::size_t b = 0; b < d.bands.size(); ++b)
        for (const SSample& s : d.bands[b].samples) {
            out += fmt::format("{:.15g},{}", s.mu, b + 1);
            for (Eigen::Index r = 0; r < 2; ++r)
                for (Eigen::Index c = 0; c < 2; ++c) {
                    if (r < s.S.rows() && c < s.S.cols())
                        out += fmt::format(",{:.15g},{:.15g}", s.S(r, c).real(), s.S(r, c).imag());
                    else
                        out += ",,";
                }
            out += "\n";
        }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput(fmt::format("cannot open {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput(fmt::format("cannot write {}", path.string()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace stepscat
