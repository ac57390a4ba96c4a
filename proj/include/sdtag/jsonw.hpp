#pragma once

#include <cstdio>
#include <string>

namespace sdtag::jsonw {

// Appends a JSON string literal (with quotes) to out.
inline void append_string(std::string& out, const std::string& s) {
    out += '"';
    for (unsigned char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\b': out += "\\b"; break;
            case '\f': out += "\\f"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (c < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else {
                    out += static_cast<char>(c);
                }
        }
    }
    out += '"';
}

// Fixed 6-decimal float, the canonical coordinate format.
inline void append_fixed6(std::string& out, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    // Avoid the "-0.000000" / "0.000000" split for the same logical value.
    if (buf[0] == '-') {
        bool all_zero = true;
        for (const char* p = buf + 1; *p; ++p) {
            if (*p != '0' && *p != '.') { all_zero = false; break; }
        }
        if (all_zero) {
            out += buf + 1;
            return;
        }
    }
    out += buf;
}

}  // namespace sdtag::jsonw
