#include "cbn/io.hpp"
#include "cbn/parallel.hpp"

namespace cbn::io {

fs::path prediction_path(const fs::path& dir, const std::string& id) {
    for (const char* ext : {".pgm", ".ppm"}) {
        const fs::path p = dir / (sanitize_name(id) + ext);
        if (fs::exists(p)) return p;
    }
    return {};
}

metrics::ScoreReport score_run(const fs::path& pred_dir, const Manifest& truth, int workers) {
    std::vector<metrics::ScoreRow> rows(truth.records.size());
    parallel_for(rows.size(), workers, [&](std::size_t i) {
        const ManifestRecord& rec = truth.records[i];
        metrics::ScoreRow& row = rows[i];
        row.id = rec.id;
        try {
            const fs::path pred_file = prediction_path(pred_dir, rec.id);
            if (pred_file.empty()) throw IoError("no prediction for '" + rec.id + "' in " + pred_dir.string());
            const Image pred = read_image(pred_file).y;
            const Image gt = read_image(truth.resolve(rec)).y;
            if (!pred.same_extent(gt))
                throw ShapeError("prediction is " + std::to_string(pred.width()) + "x" +
                                 std::to_string(pred.height()) + ", truth is " +
                                 std::to_string(gt.width()) + "x" + std::to_string(gt.height()));
            const metrics::FacialRegion region =
                metrics::region_from_landmarks(rec.landmarks, gt.width(), gt.height());
            row.psnr_db = metrics::psnr(pred, gt, region);
            row.psnr_capped = std::isinf(row.psnr_db);
            row.ssim = metrics::ssim(pred, gt, region);
        } catch (const std::exception& e) {
            row.error = e.what();
        }
    });
    return metrics::summarize(std::move(rows));
}

}  // namespace cbn::io
