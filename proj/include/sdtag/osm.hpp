#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "sdtag/errors.hpp"
#include "sdtag/tags.hpp"

namespace sdtag {

enum class ElementKind { Node, Way, Relation };

inline const char* kind_name(ElementKind k) {
    switch (k) {
        case ElementKind::Node: return "node";
        case ElementKind::Way: return "way";
        default: return "relation";
    }
}

inline ElementKind kind_from_name(const std::string& s) {
    if (s == "node") return ElementKind::Node;
    if (s == "way") return ElementKind::Way;
    if (s == "relation") return ElementKind::Relation;
    throw ContractError("unknown element kind: " + s);
}

struct OsmMember {
    ElementKind kind = ElementKind::Node;
    std::int64_t ref = 0;
    std::string role;
};

struct OsmElement {
    std::int64_t id = 0;
    ElementKind kind = ElementKind::Node;
    double lon = 0.0, lat = 0.0;        // nodes
    std::vector<std::int64_t> node_refs;  // ways
    std::vector<OsmMember> members;       // relations
    TagSet tags;
};

namespace detail {

// Minimal cursor over the OSM v0.6 XML subset. All errors carry the byte
// offset of the offending input; running out of input reports the end offset.
class XmlCursor {
public:
    explicit XmlCursor(const std::string& s) : s_(s) {}

    std::size_t pos() const { return pos_; }
    bool at_end() const { return pos_ >= s_.size(); }

    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }
    [[noreturn]] void fail_at(const std::string& msg, std::size_t at) const { throw ParseError(msg, at); }

    char peek() const {
        if (at_end()) fail_at("unexpected end of input", s_.size());
        return s_[pos_];
    }

    char take() {
        char c = peek();
        ++pos_;
        return c;
    }

    bool starts_with(const char* lit) const {
        return s_.compare(pos_, std::char_traits<char>::length(lit), lit) == 0;
    }

    bool consume(const char* lit) {
        if (!starts_with(lit)) return false;
        pos_ += std::char_traits<char>::length(lit);
        return true;
    }

    void expect(const char* lit) {
        if (!consume(lit)) {
            if (pos_ >= s_.size()) fail_at("unexpected end of input", s_.size());
            fail(std::string("expected \"") + lit + "\"");
        }
    }

    void skip_ws() {
        while (!at_end()) {
            char c = s_[pos_];
            if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos_;
            } else {
                break;
            }
        }
    }

    // Skips whitespace, comments and <! ... > declarations between markup.
    void skip_misc() {
        for (;;) {
            skip_ws();
            if (starts_with("<!--")) {
                auto end = s_.find("-->", pos_ + 4);
                if (end == std::string::npos) fail_at("unterminated comment", s_.size());
                pos_ = end + 3;
            } else if (starts_with("<?")) {
                auto end = s_.find("?>", pos_ + 2);
                if (end == std::string::npos) fail_at("unterminated processing instruction", s_.size());
                pos_ = end + 2;
            } else if (starts_with("<!")) {
                auto end = s_.find('>', pos_ + 2);
                if (end == std::string::npos) fail_at("unterminated declaration", s_.size());
                pos_ = end + 1;
            } else {
                return;
            }
        }
    }

    std::string read_name() {
        std::size_t start = pos_;
        while (!at_end()) {
            char c = s_[pos_];
            if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '=' || c == '>' || c == '/') break;
            ++pos_;
        }
        if (pos_ == start) fail("expected a name");
        return s_.substr(start, pos_ - start);
    }

    std::string read_quoted() {
        char quote = take();
        if (quote != '"' && quote != '\'') {
            --pos_;
            fail("expected a quoted attribute value");
        }
        std::string out;
        for (;;) {
            if (at_end()) fail_at("unexpected end of input", s_.size());
            char c = s_[pos_];
            if (c == quote) {
                ++pos_;
                return out;
            }
            if (c == '&') {
                out += read_entity();
            } else if (c == '<') {
                fail("raw '<' in attribute value");
            } else {
                out += c;
                ++pos_;
            }
        }
    }

private:
    std::string read_entity() {
        std::size_t start = pos_;
        auto semi = s_.find(';', pos_);
        if (semi == std::string::npos || semi - pos_ > 12) fail_at("malformed entity", start);
        std::string ent = s_.substr(pos_ + 1, semi - pos_ - 1);
        pos_ = semi + 1;
        if (ent == "amp") return "&";
        if (ent == "lt") return "<";
        if (ent == "gt") return ">";
        if (ent == "quot") return "\"";
        if (ent == "apos") return "'";
        if (!ent.empty() && ent[0] == '#') {
            int base = 10;
            std::size_t digits = 1;
            if (ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X')) {
                base = 16;
                digits = 2;
            }
            unsigned long code = 0;
            auto res = std::from_chars(ent.data() + digits, ent.data() + ent.size(), code, base);
            if (res.ec != std::errc() || res.ptr != ent.data() + ent.size() || code == 0 || code > 0x10FFFF) {
                fail_at("malformed character reference", start);
            }
            // Encode the code point as UTF-8.
            std::string out;
            if (code < 0x80) {
                out += static_cast<char>(code);
            } else if (code < 0x800) {
                out += static_cast<char>(0xC0 | (code >> 6));
                out += static_cast<char>(0x80 | (code & 0x3F));
            } else if (code < 0x10000) {
                out += static_cast<char>(0xE0 | (code >> 12));
                out += static_cast<char>(0x80 | ((code >> 6) & 0x3F));
                out += static_cast<char>(0x80 | (code & 0x3F));
            } else {
                out += static_cast<char>(0xF0 | (code >> 18));
                out += static_cast<char>(0x80 | ((code >> 12) & 0x3F));
                out += static_cast<char>(0x80 | ((code >> 6) & 0x3F));
                out += static_cast<char>(0x80 | (code & 0x3F));
            }
            return out;
        }
        fail_at("unknown entity &" + ent + ";", start);
    }

    const std::string& s_;
    std::size_t pos_ = 0;
};

struct XmlAttr {
    std::string name;
    std::string value;
    std::size_t value_offset = 0;
};

// Parses attributes up to (and including) '>' or '/>'. Returns true when the
// element was self-closing.
inline bool parse_attrs(XmlCursor& c, std::vector<XmlAttr>& attrs) {
    for (;;) {
        c.skip_ws();
        if (c.consume("/>")) return true;
        if (c.consume(">")) return false;
        XmlAttr a;
        a.name = c.read_name();
        c.skip_ws();
        c.expect("=");
        c.skip_ws();
        a.value_offset = c.pos();
        a.value = c.read_quoted();
        attrs.push_back(std::move(a));
    }
}

inline const XmlAttr* find_attr(const std::vector<XmlAttr>& attrs, const char* name) {
    for (const auto& a : attrs) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

inline std::int64_t attr_int64(const XmlCursor& c, const std::vector<XmlAttr>& attrs,
                               const char* name, std::size_t elem_start) {
    const XmlAttr* a = find_attr(attrs, name);
    if (!a) c.fail_at(std::string("missing attribute \"") + name + "\"", elem_start);
    std::int64_t v = 0;
    auto res = std::from_chars(a->value.data(), a->value.data() + a->value.size(), v);
    if (res.ec != std::errc() || res.ptr != a->value.data() + a->value.size()) {
        c.fail_at(std::string("bad integer in attribute \"") + name + "\"", a->value_offset);
    }
    return v;
}

inline double attr_double(const XmlCursor& c, const std::vector<XmlAttr>& attrs,
                          const char* name, std::size_t elem_start) {
    const XmlAttr* a = find_attr(attrs, name);
    if (!a) c.fail_at(std::string("missing attribute \"") + name + "\"", elem_start);
    double v = 0.0;
    auto res = std::from_chars(a->value.data(), a->value.data() + a->value.size(), v);
    if (res.ec != std::errc() || res.ptr != a->value.data() + a->value.size()) {
        c.fail_at(std::string("bad number in attribute \"") + name + "\"", a->value_offset);
    }
    return v;
}

// Skips an already-opened unknown element (attributes not yet consumed).
inline void skip_unknown_element(XmlCursor& c) {
    std::vector<XmlAttr> attrs;
    if (parse_attrs(c, attrs)) return;
    int depth = 1;
    while (depth > 0) {
        c.skip_misc();
        if (c.consume("</")) {
            c.read_name();
            c.skip_ws();
            c.expect(">");
            --depth;
        } else if (c.consume("<")) {
            c.read_name();
            attrs.clear();
            if (!parse_attrs(c, attrs)) ++depth;
        } else {
            c.take();  // stray text content; tolerated inside unknown elements
        }
    }
}

// Parses children of node/way/relation: tag, nd, member; unknown skipped.
inline void parse_children(XmlCursor& c, const std::string& parent, OsmElement& e) {
    for (;;) {
        c.skip_misc();
        std::size_t start = c.pos();
        if (c.consume("</")) {
            std::string name = c.read_name();
            if (name != parent) c.fail_at("mismatched closing tag </" + name + ">", start);
            c.skip_ws();
            c.expect(">");
            return;
        }
        if (!c.consume("<")) c.fail("expected markup inside <" + parent + ">");
        std::string name = c.read_name();
        if (name == "tag") {
            std::vector<XmlAttr> attrs;
            bool self_closed = parse_attrs(c, attrs);
            const XmlAttr* k = find_attr(attrs, "k");
            const XmlAttr* v = find_attr(attrs, "v");
            if (!k) c.fail_at("tag without \"k\" attribute", start);
            if (!v) c.fail_at("tag without \"v\" attribute", start);
            e.tags.set(k->value, v->value);
            if (!self_closed) {
                c.skip_misc();
                c.expect("</tag");
                c.skip_ws();
                c.expect(">");
            }
        } else if (name == "nd" && parent == "way") {
            std::vector<XmlAttr> attrs;
            bool self_closed = parse_attrs(c, attrs);
            e.node_refs.push_back(attr_int64(c, attrs, "ref", start));
            if (!self_closed) {
                c.skip_misc();
                c.expect("</nd");
                c.skip_ws();
                c.expect(">");
            }
        } else if (name == "member" && parent == "relation") {
            std::vector<XmlAttr> attrs;
            bool self_closed = parse_attrs(c, attrs);
            OsmMember m;
            const XmlAttr* type = find_attr(attrs, "type");
            if (!type) c.fail_at("member without \"type\" attribute", start);
            if (type->value != "node" && type->value != "way" && type->value != "relation") {
                c.fail_at("member with unknown type \"" + type->value + "\"", type->value_offset);
            }
            m.kind = kind_from_name(type->value);
            m.ref = attr_int64(c, attrs, "ref", start);
            if (const XmlAttr* role = find_attr(attrs, "role")) m.role = role->value;
            e.members.push_back(std::move(m));
            if (!self_closed) {
                c.skip_misc();
                c.expect("</member");
                c.skip_ws();
                c.expect(">");
            }
        } else {
            skip_unknown_element(c);
        }
    }
}

}  // namespace detail

// Parses an OSM v0.6 XML document. Malformed input raises ParseError with the
// byte offset; a way that references a node absent from the document raises
// DanglingReference with that node id.
inline std::vector<OsmElement> parse_osm_xml(const std::string& text) {
    detail::XmlCursor c(text);
    c.skip_misc();
    std::size_t osm_start = c.pos();
    c.expect("<osm");
    std::vector<OsmElement> out;
    std::vector<detail::XmlAttr> attrs;
    if (!detail::parse_attrs(c, attrs)) {
        for (;;) {
            c.skip_misc();
            std::size_t start = c.pos();
            if (c.consume("</osm")) {
                c.skip_ws();
                c.expect(">");
                break;
            }
            if (!c.consume("<")) c.fail("expected markup inside <osm>");
            std::string name = c.read_name();
            if (name == "node" || name == "way" || name == "relation") {
                OsmElement e;
                e.kind = kind_from_name(name);
                attrs.clear();
                bool self_closed = detail::parse_attrs(c, attrs);
                e.id = detail::attr_int64(c, attrs, "id", start);
                if (e.kind == ElementKind::Node) {
                    e.lat = detail::attr_double(c, attrs, "lat", start);
                    e.lon = detail::attr_double(c, attrs, "lon", start);
                }
                if (!self_closed) detail::parse_children(c, name, e);
                if (e.kind == ElementKind::Way && e.node_refs.size() < 2) {
                    c.fail_at("way " + std::to_string(e.id) + " has fewer than 2 node refs", start);
                }
                if (e.kind == ElementKind::Relation && e.members.empty()) {
                    c.fail_at("relation " + std::to_string(e.id) + " has no members", start);
                }
                out.push_back(std::move(e));
            } else {
                detail::skip_unknown_element(c);
            }
        }
        c.skip_misc();
        if (!c.at_end()) c.fail("trailing content after </osm>");
    } else {
        c.skip_misc();
        if (!c.at_end()) c.fail_at("trailing content after <osm/>", c.pos());
    }
    (void)osm_start;

    std::unordered_set<std::int64_t> node_ids;
    for (const auto& e : out) {
        if (e.kind == ElementKind::Node) node_ids.insert(e.id);
    }
    for (const auto& e : out) {
        if (e.kind != ElementKind::Way) continue;
        for (std::int64_t ref : e.node_refs) {
            if (!node_ids.count(ref)) {
                throw DanglingReference(
                    "way " + std::to_string(e.id) + " references missing node " + std::to_string(ref), ref);
            }
        }
    }
    return out;
}

namespace detail {
inline void xml_escape_into(std::string& out, const std::string& s) {
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out += c;
        }
    }
}

inline void append_tags_xml(std::string& out, const TagSet& tags, const char* indent) {
    for (const auto& [k, v] : tags.pairs()) {
        out += indent;
        out += "<tag k=\"";
        xml_escape_into(out, k);
        out += "\" v=\"";
        xml_escape_into(out, v);
        out += "\"/>\n";
    }
}
}  // namespace detail

// Canonical XML writer; parse -> serialize -> parse is a fixed point for
// coordinates with at most 7 decimal places (the OSM precision).
inline std::string serialize_osm_xml(const std::vector<OsmElement>& elements) {
    std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\">\n";
    char buf[64];
    for (const auto& e : elements) {
        if (e.kind == ElementKind::Node) {
            out += "  <node id=\"" + std::to_string(e.id) + "\"";
            std::snprintf(buf, sizeof(buf), " lat=\"%.7f\" lon=\"%.7f\"", e.lat, e.lon);
            out += buf;
            if (e.tags.empty()) {
                out += "/>\n";
            } else {
                out += ">\n";
                detail::append_tags_xml(out, e.tags, "    ");
                out += "  </node>\n";
            }
        } else if (e.kind == ElementKind::Way) {
            out += "  <way id=\"" + std::to_string(e.id) + "\">\n";
            for (auto ref : e.node_refs) out += "    <nd ref=\"" + std::to_string(ref) + "\"/>\n";
            detail::append_tags_xml(out, e.tags, "    ");
            out += "  </way>\n";
        } else {
            out += "  <relation id=\"" + std::to_string(e.id) + "\">\n";
            for (const auto& m : e.members) {
                out += "    <member type=\"";
                out += kind_name(m.kind);
                out += "\" ref=\"" + std::to_string(m.ref) + "\" role=\"";
                detail::xml_escape_into(out, m.role);
                out += "\"/>\n";
            }
            detail::append_tags_xml(out, e.tags, "    ");
            out += "  </relation>\n";
        }
    }
    out += "</osm>\n";
    return out;
}

inline std::vector<OsmElement> load_osm_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open OSM file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_osm_xml(ss.str());
}

}  // namespace sdtag
