#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pan/dataset.hpp"
#include "pan/tensor.hpp"

namespace pan {

/// Maps raw stimulus levels 0..4 onto task classes; kExclude drops the window.
struct TaskSpec {
  static constexpr int kExclude = -1;

  std::string name;
  std::array<int, 5> label_map{};
  std::size_t num_classes = 0;

  static const std::vector<TaskSpec>& all() {
    static const std::vector<TaskSpec> tasks = [] {
      std::vector<TaskSpec> v;
      v.push_back({"5way", {0, 1, 2, 3, 4}, 5});
      v.push_back({"pain-any", {0, 1, 1, 1, 1}, 2});
      for (int i = 1; i <= 4; ++i) {
        TaskSpec t;
        t.name = "t0t" + std::to_string(i);
        t.label_map = {0, kExclude, kExclude, kExclude, kExclude};
        t.label_map[static_cast<std::size_t>(i)] = 1;
        t.num_classes = 2;
        v.push_back(t);
      }
      return v;
    }();
    return tasks;
  }

  static TaskSpec by_name(const std::string& name) {
    for (const TaskSpec& t : all()) {
      if (t.name == name) return t;
    }
    std::string known;
    for (const TaskSpec& t : all()) known += (known.empty() ? "" : ", ") + t.name;
    throw ConfigError("unknown task '" + name + "' (known: " + known + ")");
  }
};

/// Windows surviving a task's label map, referencing the source dataset.
struct TaskDataset {
  const Dataset* source = nullptr;
  TaskSpec task;
  std::vector<std::uint32_t> index;
  std::vector<std::uint8_t> label;
  std::vector<std::uint16_t> subject;

  std::size_t size() const { return index.size(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(task.num_classes, 0);
    for (std::uint8_t l : label) ++counts[l];
    return counts;
  }

  std::vector<std::uint16_t> subject_ids() const {
    std::vector<std::uint16_t> ids;
    for (std::uint16_t s : subject) {
      bool seen = false;
      for (std::uint16_t k : ids) {
        if (k == s) {
          seen = true;
          break;
        }
      }
      if (!seen) ids.push_back(s);
    }
    return ids;
  }

  /// Model input tensor [rows x 1 x samples_per_window] for the given rows.
  Tensor batch_input(const std::vector<std::size_t>& rows) const {
    const std::size_t w = source->samples_per_window;
    Tensor x({rows.size(), 1, w});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const WindowRecord& rec = source->records[index[rows[r]]];
      double* dst = x.data() + r * w;
      for (std::size_t t = 0; t < w; ++t) dst[t] = static_cast<double>(rec.samples[t]);
    }
    return x;
  }

  std::vector<std::uint8_t> batch_labels(const std::vector<std::size_t>& rows) const {
    std::vector<std::uint8_t> out(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) out[r] = label[rows[r]];
    return out;
  }
};

inline TaskDataset build_task_dataset(const Dataset& data, const TaskSpec& task) {
  data.validate();
  TaskDataset out;
  out.source = &data;
  out.task = task;
  for (std::uint32_t i = 0; i < data.records.size(); ++i) {
    const WindowRecord& r = data.records[i];
    const int mapped = task.label_map[r.level];
    if (mapped == TaskSpec::kExclude) continue;
    out.index.push_back(i);
    out.label.push_back(static_cast<std::uint8_t>(mapped));
    out.subject.push_back(r.subject_id);
  }
  const std::vector<std::size_t> counts = out.class_counts();
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) {
      throw ConfigError("task " + task.name + ": class " + std::to_string(k) +
                        " has no windows after mapping");
    }
  }
  return out;
}

}  // namespace pan
