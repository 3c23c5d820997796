#pragma once

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>

#include "ctlrp/explain.hpp"
#include "ctlrp/graphdata.hpp"

namespace ctlrp {

namespace detail {

inline std::string html_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string alpha_str(double intensity) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", 0.15 + 0.75 * intensity);
    return buf;
}

}  // namespace detail

// Static, self-contained token-highlight page for one token-level
// explanation. Blue = kept and positive only for the predicted class,
// green = kept but positive for other classes too, red = negative
// attribution; shade tracks |z| normalized per event.
inline std::string render_explanation_html(const Explanation& ex, const PropagationEvent& ev,
                                           const Vocabulary* vocab = nullptr) {
    if (!ex.token_level())
        throw ConfigError("html report requires a token-level explanation");

    double max_abs = 0.0;
    const std::size_t yhat = static_cast<std::size_t>(ex.explained_class);
    for (const auto& rec : ex.tokens) max_abs = std::max(max_abs, std::abs(rec.z[yhat]));
    if (max_abs == 0.0) max_abs = 1.0;

    std::ostringstream out;
    out << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>"
        << detail::html_escape(ex.event_id) << " &mdash; " << detail::html_escape(ex.method)
        << "</title>\n</head>\n<body style=\"font-family:sans-serif;max-width:60em;margin:2em auto\">\n"
        << "<h2 style=\"margin-bottom:0.2em\">" << detail::html_escape(ex.event_id) << "</h2>\n"
        << "<p style=\"color:#555\">method " << detail::html_escape(ex.method)
        << ", predicted class " << ex.predicted;
    if (ex.low_confidence) out << " <em>(low confidence)</em>";
    out << "</p>\n"
        << "<p style=\"color:#555;font-size:0.85em\">"
        << "<span style=\"background:rgba(40,90,220,0.5);padding:0 0.3em\">class-specific</span> "
        << "<span style=\"background:rgba(40,170,70,0.5);padding:0 0.3em\">task-relevant</span> "
        << "<span style=\"background:rgba(220,50,50,0.5);padding:0 0.3em\">negative</span></p>\n";

    std::size_t cursor = 0;
    for (std::size_t v = 0; v < ev.posts.size(); ++v) {
        out << "<div style=\"border:1px solid #ddd;border-radius:4px;padding:0.5em;margin:0.5em 0\">\n"
            << "<div style=\"color:#888;font-size:0.8em\">node " << v << " ("
            << detail::html_escape(ev.posts[v].post_id) << ")</div>\n<div>";
        for (std::size_t t = 0; t < ev.posts[v].tokens.size(); ++t, ++cursor) {
            const TokenRecord& rec = ex.tokens[cursor];
            const double z = rec.z[yhat];
            const double intensity = std::abs(z) / max_abs;
            std::string style;
            if (z <= 0.0) {
                style = "background:rgba(220,50,50," + detail::alpha_str(intensity) + ")";
            } else if (rec.kept) {
                bool shared = false;
                for (std::size_t c = 0; c < rec.z.size(); ++c)
                    if (c != yhat && rec.z[c] > 0.0) shared = true;
                style = shared
                            ? "background:rgba(40,170,70," + detail::alpha_str(intensity) + ")"
                            : "background:rgba(40,90,220," + detail::alpha_str(intensity) + ")";
            }
            const std::string text =
                vocab && static_cast<std::size_t>(rec.token) < vocab->size()
                    ? vocab->token(rec.token)
                    : "t" + std::to_string(rec.token);
            out << "<span style=\"padding:0.1em 0.25em;margin:0 0.1em;border-radius:3px;" << style
                << "\">" << detail::html_escape(text) << "</span> ";
        }
        out << "</div>\n</div>\n";
    }
    out << "</body>\n</html>\n";
    return out.str();
}

}  // namespace ctlrp
