#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "storyscope/encoding.hpp"
#include "storyscope/errors.hpp"
#include "storyscope/io.hpp"
#include "storyscope/matrix.hpp"
#include "storyscope/parallel.hpp"
#include "storyscope/text.hpp"

namespace storyscope::baselines {

/// The fixed 100-word English function-word list used for relative-frequency
/// features. Order defines the feature order.
inline const std::vector<std::string>& function_words() {
    static const std::vector<std::string> words = {
        "the",   "of",    "and",   "a",     "to",      "in",    "is",     "it",    "that",  "was",
        "he",    "for",   "on",    "are",   "as",      "with",  "his",    "they",  "i",     "at",
        "be",    "this",  "have",  "from",  "or",      "had",   "by",     "not",   "but",   "what",
        "all",   "were",  "we",    "when",  "your",    "can",   "said",   "there", "an",    "which",
        "she",   "do",    "how",   "their", "if",      "will",  "up",     "other", "about", "out",
        "many",  "then",  "them",  "these", "so",      "some",  "her",    "would", "like",  "him",
        "into",  "time",  "has",   "two",   "more",    "no",    "could",  "my",    "than",  "been",
        "who",   "its",   "did",   "get",   "may",     "down",  "only",   "over",  "such",  "our",
        "me",    "any",   "also",  "after", "us",      "while", "should", "because", "now", "between",
        "under", "during", "where", "never", "might",  "must",  "here",   "both",  "each",  "you"};
    return words;
}

namespace detail {

struct Moments {
    double mean = 0.0, median = 0.0, sd = 0.0, max = 0.0;
};

inline Moments moments(std::vector<double> v) {
    Moments m;
    if (v.empty()) return m;
    for (double x : v) {
        m.mean += x;
        m.max = std::max(m.max, x);
    }
    m.mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(v.size()));
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    m.median = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    return m;
}

/// CRLF/CR to LF, then strip trailing whitespace so features cannot depend on
/// line-ending style or a trailing newline.
inline std::string normalize_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '\r') {
            out += '\n';
            if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        } else {
            out += text[i];
        }
    }
    while (!out.empty() && (out.back() == ' ' || out.back() == '\t' || out.back() == '\n'))
        out.pop_back();
    return out;
}

inline std::size_t codepoints(std::string_view s) {
    std::size_t n = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80) ++n;
    return n;
}

/// Heuristic syllable count: vowel groups with a silent-e correction, at least 1.
inline std::size_t syllables(const std::string& token) {
    auto vowel = [](char c) {
        return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
    };
    std::size_t groups = 0;
    bool in_group = false;
    for (char c : token) {
        const bool v = vowel(c);
        if (v && !in_group) ++groups;
        in_group = v;
    }
    if (groups > 1 && token.size() >= 2 && token.back() == 'e' && !vowel(token[token.size() - 2]))
        --groups;
    return std::max<std::size_t>(groups, 1);
}

/// Sentence lengths in words: segments between terminal punctuation (. ! ?),
/// counting only segments that contain at least one word.
inline std::vector<double> sentence_word_counts(std::string_view normalized) {
    std::vector<double> out;
    std::size_t start = 0;
    auto flush = [&](std::size_t end) {
        const std::size_t words = count_words(normalized.substr(start, end - start));
        if (words > 0) out.push_back(static_cast<double>(words));
        start = end;
    };
    for (std::size_t i = 0; i < normalized.size(); ++i) {
        const char c = normalized[i];
        if (c == '.' || c == '!' || c == '?') flush(i + 1);
    }
    flush(normalized.size());
    return out;
}

/// Paragraphs = runs of non-blank lines; a blank line is empty or whitespace.
inline std::vector<std::string> paragraphs(std::string_view normalized) {
    std::vector<std::string> out;
    std::string cur;
    std::size_t line_start = 0;
    auto handle_line = [&](std::string_view line) {
        const bool blank = line.find_first_not_of(" \t") == std::string_view::npos;
        if (blank) {
            if (count_words(cur) > 0) out.push_back(cur);
            cur.clear();
        } else {
            if (!cur.empty()) cur += '\n';
            cur.append(line);
        }
    };
    for (std::size_t i = 0; i <= normalized.size(); ++i) {
        if (i == normalized.size() || normalized[i] == '\n') {
            handle_line(normalized.substr(line_start, i - line_start));
            line_start = i + 1;
        }
    }
    if (count_words(cur) > 0) out.push_back(cur);
    return out;
}

struct DialogueStats {
    std::size_t quoted_words = 0;
    std::vector<double> block_words;
};

/// Double-quote characters (straight or curly) toggle dialogue; block lengths
/// are counted in word tokens. An unclosed quote runs to the end of the text.
inline DialogueStats dialogue(std::string_view normalized) {
    DialogueStats d;
    storyscope::detail::Utf8Decoder dec{normalized};
    char32_t cp = 0;
    bool inside = false, in_word = false;
    std::size_t cur_block = 0;
    while (dec.next(cp)) {
        if (cp == U'"' || cp == U'“' || cp == U'”') {
            if (inside) d.block_words.push_back(static_cast<double>(cur_block));
            inside = !inside;
            cur_block = 0;
            in_word = false;
            continue;
        }
        const bool tok = storyscope::detail::is_token_char(cp);
        if (tok && !in_word && inside) {
            ++cur_block;
            ++d.quoted_words;
        }
        in_word = tok;
    }
    if (inside) d.block_words.push_back(static_cast<double>(cur_block));
    return d;
}

}  // namespace detail

/// Names of the 144 stylometric features, in vector order. The inventory is
/// fixed here: 12 length statistics, 6 document counts, 5 vocabulary-richness
/// measures, 100 function-word frequencies, 10 punctuation rates, 4 dialogue
/// features, 4 readability indices, and 3 word-shape rates.
inline const std::vector<std::string>& stylometric_feature_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const char* unit : {"sentence_words", "word_chars", "paragraph_sentences"})
            for (const char* stat : {"mean", "median", "std", "max"})
                n.push_back(std::string(unit) + "_" + stat);
        for (const char* c : {"n_chars", "n_words", "n_sentences", "n_paragraphs", "n_distinct_words",
                              "n_syllables"})
            n.push_back(c);
        for (const char* c : {"type_token_ratio", "hapax_ratio", "yule_k", "simpson_d", "mean_word_rank"})
            n.push_back(c);
        for (const auto& w : function_words()) n.push_back("fw_" + w);
        for (const char* c : {"punct_period", "punct_comma", "punct_semicolon", "punct_colon",
                              "punct_exclaim", "punct_question", "punct_quote", "punct_apostrophe",
                              "punct_dash", "punct_paren"})
            n.push_back(c);
        for (const char* c : {"quoted_token_share", "quote_block_count", "quote_block_words_mean",
                              "quote_block_words_max"})
            n.push_back(c);
        for (const char* c : {"flesch_reading_ease", "flesch_kincaid_grade",
                              "automated_readability_index", "coleman_liau_index"})
            n.push_back(c);
        for (const char* c : {"syllables_per_word", "long_word_rate", "monosyllable_rate"})
            n.push_back(c);
        return n;
    }();
    return names;
}

/// The 144-dimensional stylometric vector for one text.
inline std::vector<double> stylometric_features(std::string_view text) {
    const std::string norm = detail::normalize_text(text);
    const auto tokens = tokenize_words(norm);
    if (tokens.empty()) throw ValidationError("stylometric features need at least one word token");

    const double n_words = static_cast<double>(tokens.size());
    std::vector<double> out;
    out.reserve(144);

    // --- length statistics -------------------------------------------------
    const auto sentence_counts = detail::sentence_word_counts(norm);
    std::vector<double> word_lens;
    word_lens.reserve(tokens.size());
    double letters = 0.0;
    for (const auto& t : tokens) {
        word_lens.push_back(static_cast<double>(detail::codepoints(t)));
        letters += static_cast<double>(detail::codepoints(t));
    }
    const auto paras = detail::paragraphs(norm);
    std::vector<double> para_sentences;
    for (const auto& p : paras)
        para_sentences.push_back(static_cast<double>(detail::sentence_word_counts(p).size()));

    for (const auto& m : {detail::moments(sentence_counts), detail::moments(word_lens),
                          detail::moments(para_sentences)}) {
        out.push_back(m.mean);
        out.push_back(m.median);
        out.push_back(m.sd);
        out.push_back(m.max);
    }

    // --- document counts ----------------------------------------------------
    std::map<std::string, std::size_t> counts;
    for (const auto& t : tokens) ++counts[t];
    double n_syllables = 0.0;
    for (const auto& t : tokens) n_syllables += static_cast<double>(detail::syllables(t));
    const double n_sentences = std::max(1.0, static_cast<double>(sentence_counts.size()));
    out.push_back(static_cast<double>(detail::codepoints(norm)));
    out.push_back(n_words);
    out.push_back(static_cast<double>(sentence_counts.size()));
    out.push_back(static_cast<double>(paras.size()));
    out.push_back(static_cast<double>(counts.size()));
    out.push_back(n_syllables);

    // --- vocabulary richness -------------------------------------------------
    const double n_types = static_cast<double>(counts.size());
    out.push_back(n_types / n_words);
    std::size_t hapax = 0;
    std::map<std::size_t, std::size_t> freq_of_freq;
    double simpson_num = 0.0;
    for (const auto& [word, c] : counts) {
        if (c == 1) ++hapax;
        ++freq_of_freq[c];
        simpson_num += static_cast<double>(c) * static_cast<double>(c - 1);
    }
    out.push_back(static_cast<double>(hapax) / n_types);
    double yule = 0.0;
    for (const auto& [r, vr] : freq_of_freq)
        yule += static_cast<double>(r) * static_cast<double>(r) * static_cast<double>(vr);
    out.push_back(1e4 * (yule - n_words) / (n_words * n_words));
    out.push_back(n_words > 1.0 ? simpson_num / (n_words * (n_words - 1.0)) : 0.0);
    // ranks by descending count, ties lexicographic; token-weighted mean rank
    {
        std::vector<std::pair<std::string, std::size_t>> by_count(counts.begin(), counts.end());
        std::sort(by_count.begin(), by_count.end(), [](const auto& a, const auto& b) {
            return a.second != b.second ? a.second > b.second : a.first < b.first;
        });
        double rank_sum = 0.0;
        for (std::size_t r = 0; r < by_count.size(); ++r)
            rank_sum += static_cast<double>(r + 1) * static_cast<double>(by_count[r].second);
        out.push_back(rank_sum / n_words);
    }

    // --- function-word frequencies -------------------------------------------
    for (const auto& w : function_words()) {
        const auto it = counts.find(w);
        out.push_back(it == counts.end() ? 0.0 : static_cast<double>(it->second) / n_words);
    }

    // --- punctuation rates ----------------------------------------------------
    const double n_chars = std::max(1.0, static_cast<double>(detail::codepoints(norm)));
    double period = 0, comma = 0, semi = 0, colon = 0, exclaim = 0, question = 0, quote = 0,
           apostrophe = 0, dash = 0, paren = 0;
    {
        storyscope::detail::Utf8Decoder dec{norm};
        char32_t cp = 0;
        while (dec.next(cp)) switch (cp) {
                case U'.': ++period; break;
                case U',': ++comma; break;
                case U';': ++semi; break;
                case U':': ++colon; break;
                case U'!': ++exclaim; break;
                case U'?': ++question; break;
                case U'"': case U'“': case U'”': ++quote; break;
                case U'\'': case U'’': ++apostrophe; break;
                case U'-': case U'–': case U'—': ++dash; break;
                case U'(': case U')': ++paren; break;
                default: break;
            }
    }
    for (double c : {period, comma, semi, colon, exclaim, question, quote, apostrophe, dash, paren})
        out.push_back(c / n_chars);

    // --- dialogue ---------------------------------------------------------------
    const auto dia = detail::dialogue(norm);
    const auto block_m = detail::moments(dia.block_words);
    out.push_back(static_cast<double>(dia.quoted_words) / n_words);
    out.push_back(static_cast<double>(dia.block_words.size()));
    out.push_back(block_m.mean);
    out.push_back(block_m.max);

    // --- readability ---------------------------------------------------------------
    const double wps = n_words / n_sentences;
    const double spw = n_syllables / n_words;
    const double cpw = letters / n_words;
    out.push_back(206.835 - 1.015 * wps - 84.6 * spw);
    out.push_back(0.39 * wps + 11.8 * spw - 15.59);
    out.push_back(4.71 * cpw + 0.5 * wps - 21.43);
    const double L = 100.0 * cpw;                    // letters per 100 words
    const double S = 100.0 * n_sentences / n_words;  // sentences per 100 words
    out.push_back(0.0588 * L - 0.296 * S - 15.8);

    // --- word-shape rates ---------------------------------------------------------
    double long_words = 0.0, mono = 0.0;
    for (const auto& t : tokens) {
        if (detail::codepoints(t) >= 7) ++long_words;
        if (detail::syllables(t) == 1) ++mono;
    }
    out.push_back(spw);
    out.push_back(long_words / n_words);
    out.push_back(mono / n_words);

    if (out.size() != 144) throw ValidationError("stylometric inventory drifted from 144 features");
    return out;
}

/// Stylometric vectors for many texts, row-parallel.
inline Matrix stylometric_matrix(const std::vector<std::string>& texts, int threads = 1) {
    Matrix m(texts.size(), 144);
    parallel_for(0, texts.size(), static_cast<unsigned>(threads), [&](std::size_t r) {
        const auto v = stylometric_features(texts[r]);
        for (std::size_t c = 0; c < 144; ++c) m.at(r, c) = v[c];
    });
    return m;
}

/// Column map in the encoding module's format: one numeric column per feature.
inline encoding::ColumnMap numeric_column_map(const std::vector<std::string>& names) {
    encoding::ColumnMap map;
    for (std::size_t i = 0; i < names.size(); ++i) {
        map.columns.push_back({names[i], encoding::ColumnKind::numeric, ""});
        map.features.push_back({names[i], taxonomy::ResponseType::scale, i, 1, {}});
    }
    return map;
}

inline encoding::ColumnMap stylometric_column_map() {
    return numeric_column_map(stylometric_feature_names());
}

// ---------------------------------------------------------------------------
// TF-IDF
// ---------------------------------------------------------------------------

struct TfidfModel {
    std::vector<std::string> vocabulary;  // lexicographic order
    std::vector<double> idf;
    std::size_t n_documents = 0;
    std::size_t k = 0;

    std::size_t size() const { return vocabulary.size(); }

    Json to_json() const {
        return Json{{"vocabulary", vocabulary}, {"idf", idf}, {"n_documents", n_documents}, {"k", k}};
    }

    static TfidfModel from_json(const Json& j) {
        TfidfModel m;
        m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
        m.idf = j.at("idf").get<std::vector<double>>();
        m.n_documents = j.at("n_documents").get<std::size_t>();
        m.k = j.at("k").get<std::size_t>();
        if (m.idf.size() != m.vocabulary.size()) throw ValidationError("tfidf model idf/vocabulary mismatch");
        return m;
    }
};

namespace detail {

inline std::vector<std::string> terms_of(std::string_view text) {
    const auto toks = tokenize_words(text);
    std::vector<std::string> terms(toks.begin(), toks.end());
    for (std::size_t i = 0; i + 1 < toks.size(); ++i) terms.push_back(toks[i] + " " + toks[i + 1]);
    return terms;
}

}  // namespace detail

/// Fit the unigram+bigram vocabulary: top-k terms by total corpus count with
/// lexicographic tie-breaks, idf = ln((1+N)/(1+df)) + 1.
inline TfidfModel tfidf_fit(const std::vector<std::string>& texts, std::size_t k = 5000) {
    if (k == 0) throw ConfigError("tfidf vocabulary size k must be at least 1");
    if (texts.empty()) throw ValidationError("tfidf fit needs at least one document");
    std::map<std::string, std::size_t> total, df;
    for (const auto& text : texts) {
        std::set<std::string> seen;
        for (auto& term : detail::terms_of(text)) {
            ++total[term];
            seen.insert(std::move(term));
        }
        for (const auto& term : seen) ++df[term];
    }
    if (total.empty()) throw ValidationError("tfidf fit found an empty vocabulary");

    std::vector<std::pair<std::string, std::size_t>> by_count(total.begin(), total.end());
    std::sort(by_count.begin(), by_count.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (by_count.size() > k) by_count.resize(k);

    TfidfModel model;
    model.k = k;
    model.n_documents = texts.size();
    for (const auto& [term, count] : by_count) model.vocabulary.push_back(term);
    std::sort(model.vocabulary.begin(), model.vocabulary.end());
    const double n = static_cast<double>(texts.size());
    for (const auto& term : model.vocabulary)
        model.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(df[term]))) + 1.0);
    return model;
}

/// Sparse L2-normalized tf-idf row: (column, value) pairs sorted by column.
inline std::vector<std::pair<std::size_t, double>> tfidf_transform(const TfidfModel& model,
                                                                   std::string_view text) {
    std::map<std::string, std::size_t> tf;
    for (auto& term : detail::terms_of(text)) ++tf[term];
    std::vector<std::pair<std::size_t, double>> row;
    // both maps are sorted, so one ordered pass aligns terms with columns
    std::size_t col = 0;
    for (const auto& [term, count] : tf) {
        while (col < model.vocabulary.size() && model.vocabulary[col] < term) ++col;
        if (col < model.vocabulary.size() && model.vocabulary[col] == term)
            row.emplace_back(col, static_cast<double>(count) * model.idf[col]);
    }
    double norm = 0.0;
    for (const auto& [c, v] : row) norm += v * v;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (auto& [c, v] : row) v /= norm;
    }
    return row;
}

/// Dense materialization of tf-idf rows, row-parallel.
inline Matrix tfidf_matrix(const TfidfModel& model, const std::vector<std::string>& texts,
                           int threads = 1) {
    Matrix m(texts.size(), model.size());
    parallel_for(0, texts.size(), static_cast<unsigned>(threads), [&](std::size_t r) {
        for (const auto& [c, v] : tfidf_transform(model, texts[r])) m.at(r, c) = v;
    });
    return m;
}

inline encoding::ColumnMap tfidf_column_map(const TfidfModel& model) {
    std::vector<std::string> names;
    names.reserve(model.size());
    for (const auto& term : model.vocabulary) names.push_back("tfidf:" + term);
    return numeric_column_map(names);
}

}  // namespace storyscope::baselines
