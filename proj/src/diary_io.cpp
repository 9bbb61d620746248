#include <map>

#include "avh/cohort.hpp"
#include "avh/error.hpp"
#include "avh/tensor_archive.hpp"

namespace avh::cohort {

// Manifest metadata layout:
//   {"kind": "diary_token_stacks", "layers": 12, "width": 768,
//    "diaries": [{"participant_id", "ema_timestamp",
//                 "sentences": [[{"token", "tensor"}, ...], ...]}],
//    "audio": [{"participant_id", "ema_timestamp",
//               "recipe": {"seconds", "f0_hz", "amplitude", "seed"} | null,
//               "tensor": name | null, "sample_rate_hz"}]}
// Each token references a 12x768 tensor. Tokens sharing one LayerStack object
// (the stub encoder's per-string cache) share one tensor.

void save_diaries(const std::filesystem::path& manifest, const std::vector<DiaryTokenStack>& diaries,
                  const std::vector<DiaryAudio>& audio) {
  TensorArchive archive;
  std::map<const LayerStack*, std::string> written;
  std::map<std::string, int> name_uses;

  auto diary_docs = nlohmann::json::array();
  for (const auto& d : diaries) {
    auto sentences = nlohmann::json::array();
    for (const auto& s : d.sentences) {
      auto tokens = nlohmann::json::array();
      for (const auto& t : s) {
        if (!t.layers) throw InvalidArgument("token '" + t.text + "' has no layer stack");
        auto it = written.find(t.layers.get());
        if (it == written.end()) {
          const int use = name_uses[t.text]++;
          auto name = "tok/" + t.text + (use ? "#" + std::to_string(use) : std::string());
          archive.put_matrix(name, *t.layers);
          it = written.emplace(t.layers.get(), std::move(name)).first;
        }
        tokens.push_back({{"token", t.text}, {"tensor", it->second}});
      }
      sentences.push_back(std::move(tokens));
    }
    diary_docs.push_back({{"participant_id", d.participant_id},
                          {"ema_timestamp", format_rfc3339(d.ema_timestamp)},
                          {"sentences", std::move(sentences)}});
  }

  auto audio_docs = nlohmann::json::array();
  for (std::size_t i = 0; i < audio.size(); ++i) {
    const auto& a = audio[i];
    nlohmann::json doc{{"participant_id", a.participant_id},
                       {"ema_timestamp", format_rfc3339(a.ema_timestamp)},
                       {"sample_rate_hz", a.sample_rate_hz},
                       {"recipe", nullptr},
                       {"tensor", nullptr}};
    if (a.recipe)
      doc["recipe"] = {{"seconds", a.recipe->seconds}, {"f0_hz", a.recipe->f0_hz},
                       {"amplitude", a.recipe->amplitude}, {"seed", a.recipe->seed}};
    if (!a.samples.empty()) {
      const auto name = "audio/" + std::to_string(i);
      archive.put(name, Tensor{{static_cast<std::int64_t>(a.samples.size())}, a.samples});
      doc["tensor"] = name;
    }
    audio_docs.push_back(std::move(doc));
  }

  auto& meta = archive.metadata();
  meta["kind"] = "diary_token_stacks";
  meta["layers"] = kEncoderLayers;
  meta["width"] = kEncoderWidth;
  meta["diaries"] = std::move(diary_docs);
  meta["audio"] = std::move(audio_docs);
  save_archive(archive, manifest);
}

void load_diaries(const std::filesystem::path& manifest, std::vector<DiaryTokenStack>& diaries,
                  std::vector<DiaryAudio>& audio) {
  const TensorArchive archive = load_archive(manifest);
  const auto& meta = archive.metadata();
  std::map<std::string, std::shared_ptr<const LayerStack>> cache;
  auto instant = [](const nlohmann::json& j) {
    auto t = parse_rfc3339(j.get<std::string>());
    if (!t) throw ArchiveError("corrupt manifest: malformed timestamp " + j.dump());
    return *t;
  };

  try {
    if (meta.at("kind").get<std::string>() != "diary_token_stacks")
      throw ArchiveError("corrupt manifest: not a diary archive");
    for (const auto& d : meta.at("diaries")) {
      DiaryTokenStack stack;
      stack.participant_id = d.at("participant_id").get<std::string>();
      stack.ema_timestamp = instant(d.at("ema_timestamp"));
      for (const auto& s : d.at("sentences")) {
        Sentence sentence;
        for (const auto& t : s) {
          const auto name = t.at("tensor").get<std::string>();
          auto it = cache.find(name);
          if (it == cache.end()) {
            archive.expect(name, {kEncoderLayers, kEncoderWidth});
            it = cache.emplace(name, std::make_shared<const LayerStack>(archive.matrix<double>(name))).first;
          }
          sentence.push_back({t.at("token").get<std::string>(), it->second});
        }
        stack.sentences.push_back(std::move(sentence));
      }
      diaries.push_back(std::move(stack));
    }
    if (meta.contains("audio")) {
      for (const auto& a : meta.at("audio")) {
        DiaryAudio clip;
        clip.participant_id = a.at("participant_id").get<std::string>();
        clip.ema_timestamp = instant(a.at("ema_timestamp"));
        clip.sample_rate_hz = a.at("sample_rate_hz").get<int>();
        if (!a.at("recipe").is_null()) {
          const auto& r = a.at("recipe");
          clip.recipe = VoiceRecipe{r.at("seconds").get<double>(), r.at("f0_hz").get<double>(),
                                    r.at("amplitude").get<double>(), r.at("seed").get<std::uint64_t>()};
        }
        if (!a.at("tensor").is_null()) clip.samples = archive.at(a.at("tensor").get<std::string>()).data;
        audio.push_back(std::move(clip));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError("corrupt manifest " + manifest.string() + ": " + e.what());
  }
}

}  // namespace avh::cohort
