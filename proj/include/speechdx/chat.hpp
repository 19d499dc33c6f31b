#pragma once

// CHAT transcript parsing and flattening to plain text.
//
// Supported subset: "@" header lines, "*XXX:" main tiers, "%xxx:" dependent tiers and
// tab-indented continuation lines. Phonology tiers and media links are carried through
// as dependent tiers but never interpreted.

#include <algorithm>
#include <cctype>
#include <istream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "speechdx/error.hpp"

namespace speechdx::chat {

struct Header {
    std::string key;    // including the leading '@', e.g. "@Languages"
    std::string value;  // text after ":\t", empty for bare headers such as "@Begin"
    bool has_colon = false;
    std::size_t position = 0;  // number of utterances preceding this header
};

struct DependentTier {
    std::string code;  // without the leading '%'
    std::string text;
};

struct Utterance {
    std::string speaker;
    std::string raw_text;
    std::vector<DependentTier> dependent_tiers;
};

struct ChatDocument {
    std::vector<Header> headers;
    std::vector<Utterance> utterances;
    bool has_end = false;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::string detab(std::string_view s) {
    std::string out(s);
    std::replace(out.begin(), out.end(), '\t', ' ');
    return out;
}

inline bool valid_speaker(std::string_view code) {
    if (code.empty()) {
        return false;
    }
    return std::all_of(code.begin(), code.end(), [](unsigned char c) {
        return std::isupper(c) || std::isdigit(c) || c == '_' || c == '-';
    });
}

}  // namespace detail

/// Parses a CHAT document. Throws Error{MalformedTierLine} with the 1-based line number
/// for tier lines without a ':' separator, invalid speaker codes, or dependent tiers and
/// continuation lines that have nothing to attach to.
inline ChatDocument parse_chat(std::istream& in) {
    ChatDocument doc;
    std::string line;
    std::size_t line_no = 0;
    // Continuations attach to whichever tier was seen last.
    enum class Last { None, Main, Dependent } last = Last::None;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) {
            line.erase(0, 3);
        }
        if (doc.has_end || detail::trim(line).empty()) {
            continue;
        }

        const char lead = line.front();
        if (lead == '@') {
            std::string_view body(line);
            if (body == "@End") {
                doc.has_end = true;
                continue;
            }
            Header h;
            h.position = doc.utterances.size();
            const auto colon = body.find(':');
            if (colon == std::string_view::npos) {
                h.key = std::string(detail::trim(body));
            } else {
                h.key = std::string(body.substr(0, colon));
                h.has_colon = true;
                h.value = detail::detab(detail::trim(body.substr(colon + 1)));
            }
            doc.headers.push_back(std::move(h));
            last = Last::None;
        } else if (lead == '*') {
            const auto colon = line.find(':');
            if (colon == std::string::npos) {
                fail(ErrorKind::MalformedTierLine, "line " + std::to_string(line_no) + ": speaker tier without ':'",
                     line_no);
            }
            Utterance u;
            u.speaker = line.substr(1, colon - 1);
            if (!detail::valid_speaker(u.speaker)) {
                fail(ErrorKind::MalformedTierLine,
                     "line " + std::to_string(line_no) + ": invalid speaker code '" + u.speaker + "'", line_no);
            }
            u.raw_text = detail::detab(detail::trim(std::string_view(line).substr(colon + 1)));
            doc.utterances.push_back(std::move(u));
            last = Last::Main;
        } else if (lead == '%') {
            const auto colon = line.find(':');
            if (colon == std::string::npos) {
                fail(ErrorKind::MalformedTierLine,
                     "line " + std::to_string(line_no) + ": dependent tier without ':'", line_no);
            }
            if (doc.utterances.empty()) {
                fail(ErrorKind::MalformedTierLine,
                     "line " + std::to_string(line_no) + ": dependent tier before any utterance", line_no);
            }
            DependentTier t;
            t.code = line.substr(1, colon - 1);
            t.text = detail::detab(detail::trim(std::string_view(line).substr(colon + 1)));
            doc.utterances.back().dependent_tiers.push_back(std::move(t));
            last = Last::Dependent;
        } else if (lead == '\t' || lead == ' ') {
            const std::string more = detail::detab(detail::trim(line));
            std::string* target = nullptr;
            if (last == Last::Main) {
                target = &doc.utterances.back().raw_text;
            } else if (last == Last::Dependent) {
                target = &doc.utterances.back().dependent_tiers.back().text;
            } else {
                fail(ErrorKind::MalformedTierLine,
                     "line " + std::to_string(line_no) + ": continuation line without a preceding tier", line_no);
            }
            if (!target->empty()) {
                *target += ' ';
            }
            *target += more;
        } else {
            fail(ErrorKind::MalformedTierLine, "line " + std::to_string(line_no) + ": unrecognised line", line_no);
        }
    }
    return doc;
}

inline ChatDocument parse_chat(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse_chat(in);
}

/// Writes the document back as CHAT. Inverse of parse_chat for documents that use tab
/// separators and contain no continuation lines.
inline std::string to_chat(const ChatDocument& doc) {
    std::string out;
    auto emit_header = [&out](const Header& h) {
        out += h.key;
        if (h.has_colon) {
            out += ':';
            if (!h.value.empty()) {
                out += '\t';
                out += h.value;
            }
        }
        out += '\n';
    };
    std::size_t next_header = 0;
    for (std::size_t i = 0; i <= doc.utterances.size(); ++i) {
        while (next_header < doc.headers.size() && doc.headers[next_header].position <= i) {
            emit_header(doc.headers[next_header++]);
        }
        if (i == doc.utterances.size()) {
            break;
        }
        const Utterance& u = doc.utterances[i];
        out += '*' + u.speaker + ":\t" + u.raw_text + '\n';
        for (const auto& t : u.dependent_tiers) {
            out += '%' + t.code + ":\t" + t.text + '\n';
        }
    }
    while (next_header < doc.headers.size()) {
        emit_header(doc.headers[next_header++]);
    }
    if (doc.has_end) {
        out += "@End\n";
    }
    return out;
}

/// Which CHAT annotation conventions flatten() removes. Dependent tiers are never emitted
/// and non-retrace bracket annotations ("[= ...]", "[*]", "[>]", ...) are always dropped.
struct StripRuleSet {
    bool drop_retraced = true;       // "[/]" "[//]" "[///]" "[/-]" "[/?]" plus the material they mark
    bool drop_fillers = true;        // "&-uh"
    bool drop_events = true;         // "&=laughs"
    bool drop_pauses = true;         // "(.)" "(..)" "(...)" "(1.5)"
    bool expand_shortenings = true;  // "(be)cause" -> "because"
    bool drop_time_bullets = true;   // "\x15 123_456 \x15"
    bool drop_unintelligible = true; // "xxx" "yyy" "www" and omitted "0word"
};

struct FlattenResult {
    std::vector<std::string> lines;  // one utterance per line
    std::vector<std::string> notes;  // unknown markup that was preserved or had to be dropped

    std::string text() const {
        std::string out;
        for (const auto& l : lines) {
            out += l;
            out += '\n';
        }
        return out;
    }
};

namespace detail {

enum class TokKind { Word, Open, Close, Annotation, Bullet };

struct Tok {
    TokKind kind;
    std::string text;
};

inline std::vector<Tok> lex(std::string_view s) {
    std::vector<Tok> toks;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            toks.push_back({TokKind::Word, word});
            word.clear();
        }
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c == ' ' || c == '\t' || c == '\n') {
            flush();
        } else if (c == '[') {
            flush();
            const auto end = s.find(']', i + 1);
            const auto stop = end == std::string_view::npos ? s.size() : end;
            toks.push_back({TokKind::Annotation, std::string(trim(s.substr(i + 1, stop - i - 1)))});
            i = stop;
        } else if (c == '\x15') {
            flush();
            const auto end = s.find('\x15', i + 1);
            const auto stop = end == std::string_view::npos ? s.size() : end;
            toks.push_back({TokKind::Bullet, std::string(s.substr(i + 1, stop - i - 1))});
            i = stop;
        } else if (c == '<' && !(word == "+")) {
            flush();
            toks.push_back({TokKind::Open, "<"});
        } else if (c == '>' && !word.empty() && word.front() == '+') {
            word += c;
        } else if (c == '>') {
            flush();
            toks.push_back({TokKind::Close, ">"});
        } else {
            word += c;
        }
    }
    flush();
    return toks;
}

inline bool is_retrace_code(std::string_view a) {
    return a == "/" || a == "//" || a == "///" || a == "/-" || a == "/?";
}

inline bool is_pause(std::string_view w) {
    if (w.size() < 3 || w.front() != '(' || w.back() != ')') {
        return false;
    }
    const auto inner = w.substr(1, w.size() - 2);
    return std::all_of(inner.begin(), inner.end(),
                       [](unsigned char c) { return c == '.' || c == ':' || std::isdigit(c); }) &&
           inner.find('.') != std::string_view::npos;
}

inline bool is_plain_char(unsigned char c) {
    return c >= 0x80 || std::isalnum(c) || c == '\'' || c == '-' || c == '_';
}

inline bool is_forbidden_char(char c) {
    return c == '[' || c == ']' || c == '&' || c == '@' || c == '%' || c == '*' || c == '\t';
}

struct Item {
    bool punct = false;
    bool open = false;
    bool close = false;
    std::string text;
};

}  // namespace detail

/// Flattens one utterance's main tier. Returns the cleaned text (possibly empty).
///
/// A retrace marker after a "<...>" group removes the group. Without angle brackets the
/// marker abandons everything said so far in the utterance (back to the previous retrace),
/// which treats "[//]" as a restart: "so &-uh I went [//] I walked ." -> "I walked .".
inline std::string flatten_utterance(std::string_view raw, const StripRuleSet& rules,
                                     std::vector<std::string>* notes = nullptr) {
    using detail::Item;
    std::vector<Item> items;
    std::size_t boundary = 0;
    auto note = [notes](std::string msg) {
        if (notes) {
            notes->push_back(std::move(msg));
        }
    };

    for (const auto& tok : detail::lex(raw)) {
        switch (tok.kind) {
        case detail::TokKind::Bullet:
            if (!rules.drop_time_bullets) {
                note("time bullet dropped: output cannot carry control characters");
            }
            break;
        case detail::TokKind::Open:
            items.push_back({false, true, false, "<"});
            break;
        case detail::TokKind::Close:
            items.push_back({false, false, true, ">"});
            break;
        case detail::TokKind::Annotation:
            if (rules.drop_retraced && detail::is_retrace_code(tok.text)) {
                if (!items.empty() && items.back().close) {
                    int depth = 0;
                    while (!items.empty()) {
                        const Item it = items.back();
                        items.pop_back();
                        depth += it.close ? 1 : 0;
                        depth -= it.open ? 1 : 0;
                        if (depth == 0) {
                            break;
                        }
                    }
                } else {
                    items.resize(std::min(items.size(), boundary));
                }
                boundary = items.size();
            }
            break;
        case detail::TokKind::Word: {
            std::string w = tok.text;
            if (w.rfind("&-", 0) == 0) {
                if (!rules.drop_fillers) {
                    items.push_back({false, false, false, w.substr(2)});
                }
                break;
            }
            if (w.rfind("&=", 0) == 0) {
                if (!rules.drop_events) {
                    items.push_back({false, false, false, w.substr(2)});
                }
                break;
            }
            if (w.front() == '&') {
                note("unknown '&' markup dropped: " + w);
                break;
            }
            if (detail::is_pause(w)) {
                if (!rules.drop_pauses) {
                    items.push_back({false, false, false, w});
                }
                break;
            }
            if (w == "." || w == "?" || w == "!") {
                items.push_back({true, false, false, w});
                break;
            }
            if (w.front() == '+') {
                const char end = w.back();
                if (w.size() > 1 && (end == '.' || end == '?' || end == '!')) {
                    items.push_back({true, false, false, std::string(1, end)});
                }
                break;
            }
            if (w == "," || w == ";" || w == ":" || w == "\xE2\x80\x9E" || w == "\xE2\x80\xA1") {
                break;
            }
            if (const auto at = w.find('@'); at != std::string::npos && at > 0) {
                w.erase(at);
            }
            if (rules.drop_unintelligible &&
                (w == "xxx" || w == "yyy" || w == "www" ||
                 (w.size() > 1 && w.front() == '0' && std::isalpha(static_cast<unsigned char>(w[1]))))) {
                break;
            }
            if (rules.expand_shortenings && w.find('(') != std::string::npos) {
                std::erase(w, '(');
                std::erase(w, ')');
            }
            std::erase(w, ':');
            std::erase(w, '^');
            // Trailing punctuation glued to a word ("walked.") becomes its own token.
            std::string tail;
            while (!w.empty() && (w.back() == '.' || w.back() == '?' || w.back() == '!')) {
                tail.insert(tail.begin(), w.back());
                w.pop_back();
            }
            while (!w.empty() && w.back() == ',') {
                w.pop_back();
            }
            if (!w.empty()) {
                const bool plain = std::all_of(w.begin(), w.end(),
                                               [](unsigned char c) { return detail::is_plain_char(c); });
                if (!plain) {
                    if (std::any_of(w.begin(), w.end(), detail::is_forbidden_char)) {
                        note("unknown markup dropped: " + w);
                        w.clear();
                    } else {
                        note("unknown markup preserved: " + w);
                    }
                }
                if (!w.empty()) {
                    items.push_back({false, false, false, w});
                }
            }
            if (!tail.empty()) {
                items.push_back({true, false, false, std::string(1, tail.back())});
            }
            break;
        }
        }
    }

    std::string out;
    bool any_word = false;
    for (const auto& it : items) {
        if (it.open || it.close) {
            continue;
        }
        any_word = any_word || !it.punct;
        if (!out.empty()) {
            out += ' ';
        }
        out += it.text;
    }
    return any_word ? out : std::string{};
}

/// Emits the cleaned main tier of every utterance whose speaker is selected.
inline FlattenResult flatten(const ChatDocument& doc, const std::set<std::string>& speakers,
                             const StripRuleSet& rules = {}) {
    require(!speakers.empty(), ErrorKind::InvalidArgument, "flatten: speaker selection is empty");
    FlattenResult result;
    for (const auto& u : doc.utterances) {
        if (!speakers.contains(u.speaker)) {
            continue;
        }
        std::string line = flatten_utterance(u.raw_text, rules, &result.notes);
        if (!line.empty()) {
            result.lines.push_back(std::move(line));
        }
    }
    return result;
}

/// Participant tiers named in "@Participants", excluding interviewer roles. Falls back to
/// {"PAR"} when the header is absent.
inline std::set<std::string> default_speakers(const ChatDocument& doc, bool include_interviewer = false) {
    static const std::set<std::string> interviewer_roles = {"Investigator", "Interviewer", "Experimenter"};
    std::set<std::string> out;
    for (const auto& h : doc.headers) {
        if (h.key != "@Participants") {
            continue;
        }
        std::stringstream entries(h.value);
        std::string entry;
        while (std::getline(entries, entry, ',')) {
            std::istringstream fields(entry);
            std::vector<std::string> parts;
            for (std::string p; fields >> p;) {
                parts.push_back(p);
            }
            if (parts.empty()) {
                continue;
            }
            const std::string& role = parts.back();
            if (include_interviewer || !interviewer_roles.contains(role)) {
                out.insert(parts.front());
            }
        }
    }
    if (out.empty()) {
        out.insert("PAR");
        if (include_interviewer) {
            out.insert("INV");
        }
    }
    return out;
}

}  // namespace speechdx::chat
