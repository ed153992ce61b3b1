#ifndef GLAM_REPORT_HPP
#define GLAM_REPORT_HPP

#include <array>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace glam {

enum class RoiKind { Mass = 0, Calcification = 1 };
enum class Laterality { Left = 0, Right = 1 };

/// Structured content of a report. `variant` picks among the template
/// phrasings and is fixed at generation time, so augmentation alone never
/// changes what the report says.
struct ReportMeta {
    int densityClass = 0;
    std::vector<RoiKind> roiKinds;
    Laterality laterality = Laterality::Left;
    int variant = 0;
};

struct ReportText {
    std::string text;
    std::map<std::string, std::string> fields;  ///< density, finding, laterality
    std::vector<std::string> sentences;
};

struct ReportAugment {
    bool shuffle = true;
    double synonymProb = 0.3;

    static ReportAugment none() { return {false, 0.0}; }
};

/// Fixed sentence table that reports and zero-shot prompts are built from.
struct TemplateTable {
    std::array<std::array<std::string, 4>, 4> density;  ///< [class][variant]
    std::array<std::string, 4> densityKeyPhrase;
    std::vector<std::string> noFinding;
    std::vector<std::string> massFinding;
    std::vector<std::string> calcFinding;
    std::array<std::string, 2> imaging;  ///< [laterality]
    std::vector<std::pair<std::string, std::string>> synonyms;  ///< word -> replacement
};

const TemplateTable& template_table();

/// Every sentence the table can emit, before synonym substitution.
std::vector<std::string> all_template_sentences();

/// 0 = no ROI, 1 = mass only, 2 = calcification present.
int birads_like_label(const std::vector<RoiKind>& kinds);

/// Builds a report: imaging sentence, one density sentence, and one finding
/// sentence per ROI kind present (or the no-finding sentence). Augmentation
/// shuffles sentence order and substitutes synonyms, driven only by `rng`.
ReportText synthesize_report(const ReportMeta& meta, std::mt19937_64& rng, ReportAugment augment = {});

/// Rebuilds a report from its stored text; sentences end with a full stop.
ReportText parse_report(const std::string& text);

/// Re-augments an existing report's sentences.
ReportText augment_report(const ReportText& report, std::mt19937_64& rng, ReportAugment augment = {});

}  // namespace glam

#endif  // GLAM_REPORT_HPP
