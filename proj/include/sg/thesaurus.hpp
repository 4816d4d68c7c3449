#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sg/error.hpp"

namespace sg {

// Word-level synonym source for the perturbation harness.
class SynonymProvider {
public:
    virtual ~SynonymProvider() = default;
    // Ordered synonym list for a word; empty when none are known.
    virtual std::vector<std::string> synonyms(const std::string& word) const = 0;
};

namespace detail {

// Compact common-word thesaurus. Offline and deterministic by design; a
// richer lexical database can be loaded from a file in the same format.
inline const std::map<std::string, std::vector<std::string>>& builtin_thesaurus() {
    static const std::map<std::string, std::vector<std::string>> table = {
        {"able", {"capable", "competent"}},
        {"about", {"regarding", "concerning"}},
        {"add", {"append", "attach"}},
        {"aid", {"help", "assist"}},
        {"all", {"every", "each"}},
        {"allow", {"permit", "let"}},
        {"also", {"too", "additionally"}},
        {"always", {"constantly", "forever"}},
        {"amazing", {"astonishing", "remarkable"}},
        {"angry", {"furious", "irate"}},
        {"answer", {"reply", "response"}},
        {"ask", {"inquire", "request"}},
        {"bad", {"poor", "awful", "terrible"}},
        {"basic", {"fundamental", "elementary"}},
        {"beautiful", {"lovely", "gorgeous"}},
        {"before", {"prior", "earlier"}},
        {"begin", {"start", "commence"}},
        {"believe", {"think", "suppose"}},
        {"best", {"finest", "greatest"}},
        {"big", {"large", "huge", "vast"}},
        {"brave", {"courageous", "bold"}},
        {"bright", {"brilliant", "radiant"}},
        {"bring", {"carry", "fetch"}},
        {"build", {"construct", "assemble"}},
        {"busy", {"occupied", "engaged"}},
        {"buy", {"purchase", "acquire"}},
        {"call", {"name", "summon"}},
        {"calm", {"peaceful", "tranquil"}},
        {"care", {"concern", "attention"}},
        {"change", {"alter", "modify"}},
        {"cheap", {"inexpensive", "affordable"}},
        {"choose", {"select", "pick"}},
        {"clean", {"spotless", "tidy"}},
        {"clear", {"obvious", "evident"}},
        {"clever", {"smart", "bright"}},
        {"close", {"near", "nearby"}},
        {"cold", {"chilly", "frigid"}},
        {"come", {"arrive", "approach"}},
        {"common", {"ordinary", "usual"}},
        {"complete", {"finish", "conclude"}},
        {"cool", {"chilly", "brisk"}},
        {"correct", {"right", "accurate"}},
        {"create", {"make", "produce"}},
        {"cut", {"slice", "trim"}},
        {"dangerous", {"hazardous", "risky"}},
        {"dark", {"dim", "gloomy"}},
        {"decide", {"determine", "resolve"}},
        {"deep", {"profound", "bottomless"}},
        {"describe", {"depict", "portray"}},
        {"difficult", {"hard", "tough"}},
        {"dirty", {"filthy", "grimy"}},
        {"discover", {"find", "uncover"}},
        {"do", {"perform", "execute"}},
        {"easy", {"simple", "effortless"}},
        {"eat", {"consume", "devour"}},
        {"empty", {"vacant", "bare"}},
        {"end", {"finish", "conclusion"}},
        {"enjoy", {"relish", "savor"}},
        {"enough", {"sufficient", "adequate"}},
        {"entire", {"whole", "complete"}},
        {"explain", {"clarify", "describe"}},
        {"fair", {"just", "impartial"}},
        {"fall", {"drop", "tumble"}},
        {"famous", {"renowned", "celebrated"}},
        {"fast", {"quick", "rapid", "swift"}},
        {"few", {"several", "scarce"}},
        {"final", {"last", "ultimate"}},
        {"find", {"locate", "discover"}},
        {"fine", {"excellent", "splendid"}},
        {"fix", {"repair", "mend"}},
        {"follow", {"pursue", "trail"}},
        {"free", {"liberated", "unrestricted"}},
        {"fresh", {"new", "recent"}},
        {"friendly", {"amiable", "cordial"}},
        {"full", {"filled", "complete"}},
        {"funny", {"amusing", "humorous"}},
        {"get", {"obtain", "receive"}},
        {"give", {"provide", "grant"}},
        {"glad", {"pleased", "delighted"}},
        {"go", {"proceed", "travel"}},
        {"good", {"fine", "excellent", "great"}},
        {"great", {"grand", "wonderful"}},
        {"happy", {"glad", "joyful", "cheerful"}},
        {"hard", {"difficult", "tough"}},
        {"hate", {"despise", "loathe"}},
        {"have", {"possess", "own"}},
        {"help", {"assist", "aid", "support"}},
        {"hide", {"conceal", "cover"}},
        {"high", {"tall", "lofty"}},
        {"hold", {"grasp", "grip"}},
        {"hot", {"scorching", "burning"}},
        {"huge", {"enormous", "immense"}},
        {"hurry", {"rush", "hasten"}},
        {"idea", {"notion", "concept"}},
        {"important", {"significant", "crucial", "vital"}},
        {"improve", {"enhance", "better"}},
        {"interesting", {"fascinating", "engaging"}},
        {"job", {"task", "occupation"}},
        {"join", {"connect", "unite"}},
        {"keep", {"retain", "preserve"}},
        {"kind", {"gentle", "considerate"}},
        {"know", {"understand", "recognize"}},
        {"large", {"big", "sizable"}},
        {"last", {"final", "ultimate"}},
        {"late", {"tardy", "delayed"}},
        {"learn", {"study", "master"}},
        {"leave", {"depart", "exit"}},
        {"like", {"enjoy", "appreciate"}},
        {"little", {"small", "tiny"}},
        {"live", {"reside", "dwell"}},
        {"long", {"lengthy", "extended"}},
        {"look", {"glance", "gaze"}},
        {"loud", {"noisy", "deafening"}},
        {"love", {"adore", "cherish"}},
        {"main", {"primary", "principal"}},
        {"make", {"create", "produce", "build"}},
        {"many", {"numerous", "countless"}},
        {"mean", {"signify", "denote"}},
        {"modern", {"contemporary", "current"}},
        {"move", {"shift", "relocate"}},
        {"near", {"close", "adjacent"}},
        {"necessary", {"essential", "required"}},
        {"need", {"require", "want"}},
        {"new", {"novel", "recent", "fresh"}},
        {"nice", {"pleasant", "agreeable"}},
        {"note", {"record", "remark"}},
        {"now", {"currently", "presently"}},
        {"often", {"frequently", "regularly"}},
        {"old", {"ancient", "aged", "elderly"}},
        {"open", {"unlock", "unfold"}},
        {"order", {"arrange", "organize"}},
        {"part", {"portion", "segment"}},
        {"perfect", {"flawless", "ideal"}},
        {"place", {"location", "spot"}},
        {"plan", {"scheme", "design"}},
        {"popular", {"favored", "widespread"}},
        {"possible", {"feasible", "viable"}},
        {"pretty", {"attractive", "lovely"}},
        {"problem", {"issue", "difficulty"}},
        {"provide", {"supply", "furnish"}},
        {"put", {"place", "set"}},
        {"question", {"query", "inquiry"}},
        {"quick", {"fast", "speedy"}},
        {"quiet", {"silent", "hushed"}},
        {"read", {"peruse", "scan"}},
        {"real", {"genuine", "actual"}},
        {"recent", {"new", "fresh"}},
        {"remember", {"recall", "recollect"}},
        {"rich", {"wealthy", "affluent"}},
        {"right", {"correct", "proper"}},
        {"run", {"sprint", "dash"}},
        {"sad", {"unhappy", "sorrowful"}},
        {"safe", {"secure", "protected"}},
        {"same", {"identical", "equal"}},
        {"say", {"state", "declare"}},
        {"see", {"observe", "notice"}},
        {"send", {"dispatch", "transmit"}},
        {"serious", {"grave", "solemn"}},
        {"show", {"display", "exhibit"}},
        {"shut", {"close", "seal"}},
        {"simple", {"plain", "straightforward"}},
        {"slow", {"sluggish", "gradual"}},
        {"small", {"little", "tiny", "minor"}},
        {"smart", {"intelligent", "clever"}},
        {"soft", {"gentle", "tender"}},
        {"special", {"particular", "unique"}},
        {"start", {"begin", "initiate", "launch"}},
        {"stay", {"remain", "linger"}},
        {"stop", {"halt", "cease"}},
        {"story", {"tale", "narrative"}},
        {"strange", {"odd", "peculiar"}},
        {"strong", {"powerful", "sturdy"}},
        {"sure", {"certain", "confident"}},
        {"take", {"grab", "seize"}},
        {"talk", {"speak", "converse"}},
        {"tell", {"inform", "narrate"}},
        {"text", {"passage", "document"}},
        {"think", {"ponder", "consider"}},
        {"tiny", {"minuscule", "minute"}},
        {"tired", {"weary", "exhausted"}},
        {"true", {"accurate", "genuine"}},
        {"try", {"attempt", "endeavor"}},
        {"turn", {"rotate", "spin"}},
        {"understand", {"comprehend", "grasp"}},
        {"use", {"employ", "utilize"}},
        {"usual", {"customary", "typical"}},
        {"very", {"extremely", "highly"}},
        {"wait", {"pause", "linger"}},
        {"walk", {"stroll", "march"}},
        {"want", {"desire", "wish"}},
        {"warm", {"heated", "cozy"}},
        {"watch", {"observe", "view"}},
        {"way", {"method", "manner"}},
        {"weak", {"feeble", "frail"}},
        {"wet", {"damp", "soaked"}},
        {"whole", {"entire", "complete"}},
        {"wide", {"broad", "expansive"}},
        {"win", {"triumph", "prevail"}},
        {"wise", {"sage", "prudent"}},
        {"wonderful", {"marvelous", "splendid"}},
        {"word", {"term", "expression"}},
        {"work", {"labor", "toil"}},
        {"world", {"globe", "earth"}},
        {"write", {"compose", "draft", "pen"}},
        {"wrong", {"incorrect", "mistaken"}},
        {"young", {"youthful", "juvenile"}},
    };
    return table;
}

inline std::string lowercase(std::string_view word) {
    std::string out(word);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

} // namespace detail

class MiniThesaurus final : public SynonymProvider {
public:
    MiniThesaurus() : table_(&detail::builtin_thesaurus()) {}

    // File format: one entry per line, "word: synonym, synonym, ...";
    // '#' starts a comment.
    static MiniThesaurus from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open thesaurus file: " + path);
        MiniThesaurus t;
        t.table_ = nullptr;
        int line_number = 0;
        std::string line;
        while (std::getline(in, line)) {
            ++line_number;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const auto colon = line.find(':');
            if (colon == std::string::npos)
                throw ParseError(line_number, "expected \"word: synonyms\"");
            const std::string word = detail::lowercase(trim(line.substr(0, colon)));
            std::vector<std::string> syns;
            std::stringstream rest(line.substr(colon + 1));
            std::string item;
            while (std::getline(rest, item, ',')) {
                const std::string s = trim(item);
                if (!s.empty()) syns.push_back(s);
            }
            if (word.empty() || syns.empty())
                throw ParseError(line_number, "empty word or synonym list");
            t.custom_[word] = std::move(syns);
        }
        return t;
    }

    std::vector<std::string> synonyms(const std::string& word) const override {
        const std::string key = detail::lowercase(word);
        if (table_) {
            const auto it = table_->find(key);
            return it == table_->end() ? std::vector<std::string>{} : it->second;
        }
        const auto it = custom_.find(key);
        return it == custom_.end() ? std::vector<std::string>{} : it->second;
    }

private:
    static std::string trim(const std::string& s) {
        const auto from = s.find_first_not_of(" \t\r");
        if (from == std::string::npos) return "";
        const auto to = s.find_last_not_of(" \t\r");
        return s.substr(from, to - from + 1);
    }

    const std::map<std::string, std::vector<std::string>>* table_;
    std::map<std::string, std::vector<std::string>> custom_;
};

} // namespace sg
