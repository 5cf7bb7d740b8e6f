#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mutatt::reference {

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, one Vec per row

// x[in] * W[in x out] + b[out]; W read from a flat row-major tensor.
Vec affine(const Vec& x, const Tensor& w, const Tensor* b, std::size_t w_row0 = 0) {
  const std::size_t out = w.shape()[1];
  Vec y(out, 0.0);
  for (std::size_t j = 0; j < out; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w.at(w_row0 + i, j);
    y[j] = acc + (b != nullptr ? (*b)[j] : 0.0);
  }
  return y;
}

Vec concat(const Vec& a, const Vec& b) {
  Vec out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine(const Vec& a, const Vec& b) {
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

// Softmax over positions where keep[i]; others get 0.
Vec softmax(const Vec& x, const std::vector<bool>& keep) {
  double top = -INFINITY;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (keep[i]) top = std::max(top, x[i]);
  }
  Vec out(x.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (keep[i]) total += out[i] = std::exp(x[i] - top);
  }
  for (double& v : out) v /= total;
  return out;
}

Vec weighted_rows(const Vec& w, const Mat& rows) {
  Vec out(rows.front().size(), 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += w[r] * rows[r][k];
  }
  return out;
}

Vec mean_rows(const Mat& rows, const std::vector<bool>& keep) {
  Vec out(rows.front().size(), 0.0);
  double count = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!keep[r]) continue;
    count += 1.0;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += rows[r][k];
  }
  for (double& v : out) v /= count;
  return out;
}

Vec as_vec(const Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

struct Visual {
  Mat slots;
  std::vector<bool> keep;
  Vec pooled;
  bool active = false;
};

// Box relative to the image, plus relative area.
Vec location_vector(const Box& box, ImageSize img) {
  auto cx = [&](double v) { return std::min(std::max(v, 0.0), img.width); };
  auto cy = [&](double v) { return std::min(std::max(v, 0.0), img.height); };
  const double x0 = cx(box.x_tl), x1 = cx(box.x_br), y0 = cy(box.y_tl), y1 = cy(box.y_br);
  return {x0 / img.width, y0 / img.height, x1 / img.width, y1 / img.height,
          (x1 - x0) * (y1 - y0) / (img.width * img.height)};
}

std::array<Visual, 3> visuals(const ModelParams& p, const RegionFeatures& region) {
  std::array<Visual, 3> out;
  const std::size_t cells = region.subject_grid.shape()[0];
  const std::size_t dv = region.subject_grid.shape()[1];

  Visual& subj = out[0];
  for (std::size_t c = 0; c < cells; ++c) {
    Vec cell(dv);
    for (std::size_t k = 0; k < dv; ++k) cell[k] = region.subject_grid.at(c, k);
    subj.slots.push_back(affine(cell, p.subject_proj.w, &p.subject_proj.b));
  }
  subj.keep.assign(cells, true);
  subj.pooled = mean_rows(subj.slots, subj.keep);
  subj.active = true;

  // Neighbors sorted by center distance, ties kept in input order.
  const Box& r = region.box;
  auto center_dist = [&r](const Box& b) {
    const double dx = 0.5 * (b.x_tl + b.x_br) - 0.5 * (r.x_tl + r.x_br);
    const double dy = 0.5 * (b.y_tl + b.y_br) - 0.5 * (r.y_tl + r.y_br);
    return std::sqrt(dx * dx + dy * dy);
  };
  std::vector<std::size_t> order(region.context.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return center_dist(region.context[a].box) < center_dist(region.context[b].box);
  });
  const double w = r.x_br - r.x_tl, h = r.y_br - r.y_tl;
  const double image_area = region.image.width * region.image.height;
  Mat offsets(5, Vec(5, 0.0));
  for (std::size_t s = 0; s < order.size() && s < 5; ++s) {
    const Box& n = region.context[order[s]].box;
    offsets[s] = {(n.x_tl - r.x_tl) / w, (n.y_tl - r.y_tl) / h, (n.x_br - r.x_br) / w,
                  (n.y_br - r.y_br) / h, (n.x_br - n.x_tl) * (n.y_br - n.y_tl) / image_area};
  }

  Visual& loc = out[1];
  Vec loc_in = location_vector(region.box, region.image);
  for (const Vec& row : offsets) loc_in.insert(loc_in.end(), row.begin(), row.end());
  loc.slots.push_back(affine(loc_in, p.location_proj.w, &p.location_proj.b));
  loc.keep = {true};
  loc.pooled = loc.slots[0];
  loc.active = true;

  Visual& rel = out[2];
  const std::size_t d = p.dims.embed_dim;
  rel.slots.assign(5, Vec(d, 0.0));
  rel.keep.assign(5, false);
  for (std::size_t s = 0; s < order.size() && s < 5; ++s) {
    const Vec in = concat(as_vec(region.context[order[s]].feature), offsets[s]);
    rel.slots[s] = affine(in, p.relationship_proj.w, &p.relationship_proj.b);
    rel.keep[s] = true;
  }
  rel.active = !order.empty();
  if (rel.active) rel.pooled = mean_rows(rel.slots, rel.keep);
  return out;
}

}  // namespace

ReferenceScore score(const ModelParams& p, const RegionFeatures& region,
                     std::span<const std::int64_t> token_ids, const AblationFlags& flags) {
  const std::size_t d = p.dims.embed_dim;
  const std::size_t T = token_ids.size();

  // Words: embedding rows, padding id 0 maps to zeros.
  Mat words(T, Vec(d, 0.0));
  std::vector<bool> real(T);
  for (std::size_t t = 0; t < T; ++t) {
    real[t] = token_ids[t] != 0;
    if (!real[t]) continue;
    for (std::size_t k = 0; k < d; ++k) {
      words[t][k] = p.embedding.at(static_cast<std::size_t>(token_ids[t]), k);
    }
  }
  // Sinusoidal position codes.
  Mat pos(T, Vec(d));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < d; ++k) {
      const double freq = std::pow(10000.0, static_cast<double>(k - k % 2) / static_cast<double>(d));
      pos[t][k] = k % 2 == 0 ? std::sin(static_cast<double>(t) / freq)
                             : std::cos(static_cast<double>(t) / freq);
    }
  }

  // Module weights from first, last and mean real word.
  std::size_t first = T, last = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (real[t]) {
      first = std::min(first, t);
      last = t;
    }
  }
  Vec summary = concat(concat(words[first], words[last]), mean_rows(words, real));
  const Vec omega = softmax(affine(summary, p.module_weight_w, &p.module_weight_b),
                            std::vector<bool>(3, true));

  const auto vis = visuals(p, region);
  ReferenceScore out;
  out.module_weights = omega;
  out.combined.assign(3, 0.0);

  for (std::size_t m = 0; m < 3; ++m) {
    const Visual& v = vis[m];
    if (!v.active) continue;

    Vec logits(T);
    const Vec& query = as_vec(p.word_query[m]);
    for (std::size_t t = 0; t < T; ++t) logits[t] = dot(concat(words[t], pos[t]), query);
    const Vec lambda = softmax(logits, real);
    const Vec q = weighted_rows(lambda, words);

    const Guidance mode = flags.mode[m];
    double vl = 0.0;
    Vec guided_visual = v.pooled;
    if (mode == Guidance::kNone) {
      vl = cosine(v.pooled, q);
    } else {
      Vec s(T);
      for (std::size_t t = 0; t < T; ++t) s[t] = cosine(v.pooled, words[t]) * lambda[t];
      const Vec q_bar = weighted_rows(softmax(s, real), words);
      vl = cosine(v.pooled, q_bar);
      if (mode == Guidance::kMutual && m != 1) {
        const AttentionParams& att = m == 0 ? p.subject_attention : p.relationship_attention;
        Vec a_logits(v.slots.size());
        for (std::size_t n = 0; n < v.slots.size(); ++n) {
          Vec hidden = affine(concat(v.slots[n], q), att.w1, &att.b);
          for (double& x : hidden) x = std::tanh(x);
          a_logits[n] = affine(hidden, att.w2, nullptr)[0];
        }
        guided_visual = weighted_rows(softmax(a_logits, v.keep), v.slots);
      }
    }
    const MlpParams& mlp = p.mlp[m];
    Vec hidden = affine(concat(q, guided_visual), mlp.w1, &mlp.b1);
    for (double& x : hidden) x = std::max(x, 0.0);
    const double lv = affine(hidden, mlp.w2, &mlp.b2)[0];
    out.combined[m] = vl + lv;
  }
  out.total = dot(omega, out.combined);
  return out;
}

}  // namespace mutatt::reference
