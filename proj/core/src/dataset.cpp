#include "prismer/dataset.hpp"

#include <algorithm>
#include <cstdio>

#include "prismer/config_io.hpp"
#include "prismer/error.hpp"
#include "prismer/rng.hpp"
#include "prismer/tensor_io.hpp"

namespace prismer {

namespace {

Tensor token_tensor(const std::vector<int>& tokens) {
  if (tokens.empty()) throw ContractError("cannot store an empty token list");
  std::vector<double> values(tokens.begin(), tokens.end());
  return Tensor::from({tokens.size()}, std::move(values));
}

std::vector<int> tensor_tokens(const Tensor& t) {
  std::vector<int> out;
  out.reserve(t.numel());
  for (double v : t.data()) out.push_back(static_cast<int>(v));
  return out;
}

std::string scene_dir_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05zu", index);
  return buf;
}

bool contains_kind(const std::vector<ExpertKind>& kinds, ExpertKind kind) {
  return std::find(kinds.begin(), kinds.end(), kind) != kinds.end();
}

}  // namespace

void DatasetSpec::validate() const {
  if (scenes == 0) throw ConfigError("dataset needs at least one scene");
  if (difficulty < 0) throw ConfigError("difficulty must be non-negative");
  if (height < 16 || width < 16) throw ConfigError("canvas must be at least 16x16");
  if (!(corruption.fraction >= 0.0 && corruption.fraction <= 1.0)) {
    throw RangeError("corruption fraction must lie in [0, 1]");
  }
  for (auto kind : corruption.kinds) {
    if (!contains_kind(experts, kind)) {
      throw ConfigError("corrupted expert '" + std::string(expert_name(kind)) + "' is not enabled");
    }
  }
}

std::uint64_t DatasetSpec::scene_seed(std::size_t index) const { return derive_seed(derive_seed(seed, "scene"), index); }

std::uint64_t DatasetSpec::pipeline_seed() const { return derive_seed(seed, "pipeline"); }

SceneRecord make_record(std::uint64_t scene_seed, const DatasetSpec& spec, const ExpertPipeline& pipeline) {
  SceneRecord record;
  record.seed = scene_seed;
  record.scene = generate_scene(scene_seed, spec.difficulty, spec.height, spec.width);
  record.rgb = render_rgb(record.scene);
  for (auto kind : spec.experts) {
    ExpertLabelMap label;
    if (kind == ExpertKind::kNoise) {
      label = make_noise_expert(static_cast<std::size_t>(spec.height), static_cast<std::size_t>(spec.width), 1,
                                derive_seed(scene_seed, "noise"));
    } else {
      label = render_expert_label(record.scene, kind, pipeline);
    }
    if (spec.corruption.fraction > 0.0 && contains_kind(spec.corruption.kinds, kind)) {
      label = corrupt_uniform(label, spec.corruption.fraction,
                              derive_seed(scene_seed, "corrupt." + std::string(expert_name(kind))));
    }
    record.experts.push_back(std::move(label));
  }
  record.text = build_caption_and_qa(record.scene);
  return record;
}

std::vector<SceneRecord> make_records(const DatasetSpec& spec, const ExpertPipeline& pipeline) {
  spec.validate();
  std::vector<SceneRecord> records;
  records.reserve(spec.scenes);
  for (std::size_t i = 0; i < spec.scenes; ++i) records.push_back(make_record(spec.scene_seed(i), spec, pipeline));
  return records;
}

KeyValueFile build_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  return build_dataset(spec, dir, ExpertPipeline::create(spec.pipeline_seed()));
}

KeyValueFile build_dataset(const DatasetSpec& spec, const std::filesystem::path& dir, const ExpertPipeline& pipeline) {
  const auto records = make_records(spec, pipeline);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  KeyValueFile manifest;
  manifest.set("format", "prismer-dataset-1");
  write_dataset_spec(manifest, spec);
  manifest.set("pipeline.seed", std::to_string(spec.pipeline_seed()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto name = scene_dir_name(i);
    const auto scene_dir = dir / name;
    std::filesystem::create_directories(scene_dir, ec);
    if (ec) throw IoError("cannot create " + scene_dir.string() + ": " + ec.message());
    manifest.set("scene." + std::to_string(i) + ".seed", std::to_string(r.seed));
    manifest.set("scene." + std::to_string(i) + ".dir", name);

    write_pten(scene_dir / "rgb.pten", r.rgb);
    for (const auto& e : r.experts) {
      const auto stem = "expert." + std::string(expert_name(e.kind));
      write_pten(scene_dir / (stem + ".pten"), e.grid);
      if (!e.instance_ids.empty()) write_pten(scene_dir / (stem + ".instances.pten"), token_tensor(e.instance_ids));
    }
    write_pten(scene_dir / "caption.pten", token_tensor(r.text.caption));
    KeyValueFile record;
    record.set("seed", std::to_string(r.seed));
    record.set("qa.count", std::to_string(r.text.qa.size()));
    for (std::size_t q = 0; q < r.text.qa.size(); ++q) {
      const auto& qa = r.text.qa[q];
      const auto key = "qa." + std::to_string(q);
      record.set(key + ".kind", std::string(question_kind_name(qa.kind)));
      record.set(key + ".distractors", std::to_string(qa.distractors.size()));
      write_pten(scene_dir / (key + ".question.pten"), token_tensor(qa.question));
      write_pten(scene_dir / (key + ".answer.pten"), token_tensor(qa.answer));
      for (std::size_t d = 0; d < qa.distractors.size(); ++d) {
        write_pten(scene_dir / (key + ".distractor" + std::to_string(d) + ".pten"), token_tensor(qa.distractors[d]));
      }
    }
    record.save(scene_dir / "record.txt");
  }
  manifest.save(dir / "manifest.txt");
  return manifest;
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest = KeyValueFile::load(dir / "manifest.txt");
  if (manifest.require("format") != "prismer-dataset-1") throw IoError("unrecognised dataset format in " + dir.string());
  LoadedDataset out;
  out.spec = read_dataset_spec(manifest);
  out.spec.validate();
  for (std::size_t i = 0; i < out.spec.scenes; ++i) {
    const auto key = "scene." + std::to_string(i);
    const auto scene_dir = dir / manifest.require(key + ".dir");
    SceneRecord r;
    r.seed = std::stoull(manifest.require(key + ".seed"));
    r.scene = generate_scene(r.seed, out.spec.difficulty, out.spec.height, out.spec.width);
    r.rgb = read_pten(scene_dir / "rgb.pten");
    for (auto kind : out.spec.experts) {
      const auto stem = "expert." + std::string(expert_name(kind));
      ExpertLabelMap label;
      label.kind = kind;
      label.grid = read_pten(scene_dir / (stem + ".pten"));
      const auto ids = scene_dir / (stem + ".instances.pten");
      if (std::filesystem::exists(ids)) label.instance_ids = tensor_tokens(read_pten(ids));
      r.experts.push_back(std::move(label));
    }
    r.text.caption = tensor_tokens(read_pten(scene_dir / "caption.pten"));
    const auto record = KeyValueFile::load(scene_dir / "record.txt");
    const auto count = std::stoull(record.require("qa.count"));
    for (std::size_t q = 0; q < count; ++q) {
      const auto qkey = "qa." + std::to_string(q);
      QaPair qa;
      qa.kind = parse_question_kind(record.require(qkey + ".kind"));
      qa.question = tensor_tokens(read_pten(scene_dir / (qkey + ".question.pten")));
      qa.answer = tensor_tokens(read_pten(scene_dir / (qkey + ".answer.pten")));
      const auto distractors = std::stoull(record.require(qkey + ".distractors"));
      for (std::size_t d = 0; d < distractors; ++d) {
        qa.distractors.push_back(
            tensor_tokens(read_pten(scene_dir / (qkey + ".distractor" + std::to_string(d) + ".pten"))));
      }
      r.text.qa.push_back(std::move(qa));
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

TokenSequence caption_sequence(const SceneText& text, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.tokens = vocab.encode(kCaptionPrompt);
  seq.prefix = seq.tokens.size();
  seq.tokens.insert(seq.tokens.end(), text.caption.begin(), text.caption.end());
  seq.tokens.push_back(kEosToken);
  return seq;
}

TokenSequence qa_sequence(const QaPair& qa) {
  TokenSequence seq;
  seq.tokens = qa.question;
  seq.prefix = seq.tokens.size();
  seq.tokens.insert(seq.tokens.end(), qa.answer.begin(), qa.answer.end());
  seq.tokens.push_back(kEosToken);
  return seq;
}

std::vector<TrainingExample> make_examples(const std::vector<SceneRecord>& records, TaskKind task,
                                           const std::vector<QuestionKind>& question_kinds) {
  std::vector<TrainingExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    TrainingExample ex{r.rgb, r.experts, {}};
    if (task == TaskKind::kCaptioning) {
      ex.sequences.push_back(caption_sequence(r.text));
    } else {
      for (const auto& qa : r.text.qa) {
        if (question_kinds.empty() ||
            std::find(question_kinds.begin(), question_kinds.end(), qa.kind) != question_kinds.end()) {
          ex.sequences.push_back(qa_sequence(qa));
        }
      }
    }
    if (!ex.sequences.empty()) out.push_back(std::move(ex));
  }
  return out;
}

std::string dataset_fingerprint(const std::vector<SceneRecord>& records) {
  std::vector<std::uint8_t> bytes;
  const auto append_int = [&](std::int64_t v) {
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xff));
  };
  const auto append_tokens = [&](const std::vector<int>& tokens) {
    append_int(static_cast<std::int64_t>(tokens.size()));
    for (int t : tokens) append_int(t);
  };
  for (const auto& r : records) {
    append_int(static_cast<std::int64_t>(r.seed));
    const auto digest = tensor_sha256(r.rgb);
    bytes.insert(bytes.end(), digest.begin(), digest.end());
    append_tokens(r.text.caption);
    for (const auto& qa : r.text.qa) {
      append_int(static_cast<std::int64_t>(qa.kind));
      append_tokens(qa.question);
      append_tokens(qa.answer);
      for (const auto& d : qa.distractors) append_tokens(d);
    }
  }
  return sha256_hex(bytes);
}

}  // namespace prismer
