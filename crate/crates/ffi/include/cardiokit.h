#ifndef CARDIOKIT_H
#define CARDIOKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CkStatus {
  CK_STATUS_OK = 0,
  CK_STATUS_NULL_POINTER = 1,
  CK_STATUS_INVALID_ARGUMENT = 2,
  CK_STATUS_IO = 3,
  CK_STATUS_FORMAT = 4,
  CK_STATUS_LOCATE = 5,
  CK_STATUS_MODEL = 6,
  CK_STATUS_BUILD = 7,
  CK_STATUS_FAILED = 8,
  CK_STATUS_PANIC = 9,
} CkStatus;

// Label (UINT8) volume.
typedef struct CkLabelVolume CkLabelVolume;

// Trained diagnosis ensemble.
typedef struct CkModel CkModel;

// Scalar (FLOAT32) volume.
typedef struct CkScalarVolume CkScalarVolume;

typedef struct CkClassMetrics {
  double dice;
  double jaccard;
  // Valid only when `hd_defined` is nonzero.
  double hd_mm;
  uint8_t hd_defined;
} CkClassMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after success.
// The pointer stays valid until the next call on the same thread.
const char *ck_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ck_version(void);

enum CkStatus ck_scalar_load(const char *path, struct CkScalarVolume **out);

void ck_scalar_free(struct CkScalarVolume *v);

// Writes `(nx, ny, nz, nt)` into `dims[0..4]`.
enum CkStatus ck_scalar_dims(const struct CkScalarVolume *v, size_t *dims);

// Locates the left-ventricle centre of a cine volume with default settings.
enum CkStatus ck_roi_locate(const struct CkScalarVolume *v, size_t *x, size_t *y);

enum CkStatus ck_labels_load(const char *path, struct CkLabelVolume **out);

enum CkStatus ck_labels_save(const struct CkLabelVolume *v, const char *path);

// Wraps a caller-owned buffer of `nx * ny * nz` labels (x fastest) in a
// new single-frame volume. The buffer is copied.
enum CkStatus ck_labels_from_buffer(const uint8_t *data,
                                    size_t nx,
                                    size_t ny,
                                    size_t nz,
                                    const double *spacing,
                                    struct CkLabelVolume **out);

void ck_labels_free(struct CkLabelVolume *v);

enum CkStatus ck_labels_dims(const struct CkLabelVolume *v, size_t *dims);

// Number of voxels carrying `class`.
enum CkStatus ck_labels_count(const struct CkLabelVolume *v, uint8_t class_, size_t *out);

// Post-processes `v` with every stage enabled into a new volume.
enum CkStatus ck_labels_postprocess(const struct CkLabelVolume *v, struct CkLabelVolume **out);

// Metrics of one foreground class of single-frame volumes.
enum CkStatus ck_eval_class(const struct CkLabelVolume *pred,
                            const struct CkLabelVolume *gt,
                            uint8_t class_,
                            struct CkClassMetrics *out);

// Writes the 20 features into `values`; `present[i]` is 0 where a feature
// is undefined.
enum CkStatus ck_features_extract(const struct CkLabelVolume *ed,
                                  const struct CkLabelVolume *es,
                                  double myo_density,
                                  double *values,
                                  uint8_t *present);

enum CkStatus ck_model_load(const char *path, struct CkModel **out);

void ck_model_free(struct CkModel *m);

// Two-stage prediction from 20 feature values. `present` may be null when
// every value is defined. The label index follows NOR, MINF, DCM, HCM, ARV.
enum CkStatus ck_model_predict(const struct CkModel *m,
                               const double *values,
                               const uint8_t *present,
                               uint32_t *label,
                               uint8_t *expert_fired);

// Trainable parameters of a network variant (`'A'`, `'B'` or `'C'`) with
// uniform dense-block depth.
enum CkStatus ck_net_param_count(char variant,
                                 size_t k,
                                 size_t f,
                                 size_t p,
                                 size_t layers,
                                 size_t input_hw,
                                 uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARDIOKIT_H */
