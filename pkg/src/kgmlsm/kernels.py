"""Daily two-bucket water-balance kernel.

This is the one genuinely sequential inner loop in the package (each day
depends on the previous day's soil state), so it is the numba target. The
module exposes both builds:

    bucket_water_balance_numpy   plain Python/numpy reference
    bucket_water_balance_numba   @njit twin (None when numba is unavailable)
    bucket_water_balance         the backend-selected default

Water is tracked in mm over two buckets: a 50 mm surface layer and a
1000 mm rootzone. Each day: rain infiltrates, overflow above saturation
runs off, evapotranspiration is drawn up to availability, and water above
field capacity drains. Crop water stress on a day is the met fraction of
the ET demand; the seasonal stress index is its mean over the crop window.
"""

import math

from .backend import HAVE_NUMBA, USE_NUMBA, njit

SM_MIN = 0.05  # wilting floor, volumetric fraction
SM_SAT = 0.55  # saturation ceiling
SM_FC = 0.35  # field capacity, drainage threshold
DEPTH_SURFACE = 50.0  # mm
DEPTH_ROOTZONE = 1000.0  # mm
DRAIN_RATE_ROOTZONE = 0.3  # fraction of above-FC water drained per day
DRAIN_RATE_SURFACE = 0.5
SURFACE_ET_FRAC = 0.7  # surface evaporation demand as a fraction of ET0
BARE_ET_FRAC = 0.4  # rootzone ET demand outside the crop window
SOW_SM_THRESHOLD = 0.25  # rootzone moisture needed to trigger sowing
CROP_DURATION_DAYS = 150
# reproductive window (days after sowing) where water stress is most
# damaging; the seasonal index multiplies the window mean into the total
CRITICAL_START = 55
CRITICAL_END = 95
# Hargreaves-style demand scaled so midsummer ET0 lands near 4-5 mm/day
# with measured (not extraterrestrial) radiation driving it.
HARGREAVES_COEF = 0.00216


def _bucket_loop(radn, tmax, tmin, ppt, sm_s0, sm_r0, sow_start, sow_end,
                 sm_s_out, sm_r_out):
    """Run the daily balance over one year; fill the per-day SM outputs.

    Returns (sow_day, stress_mean, critical_mean): the met-demand fraction
    averaged over the whole crop window and over the reproductive window.
    Days are 0-based day-of-year indices; sow_start/sow_end bound the
    sowing window. The crop is sown on the first window day with rootzone
    SM >= SOW_SM_THRESHOLD, else at the window end.
    """
    n = radn.shape[0]
    sm_s = sm_s0
    sm_r = sm_r0
    sow_day = -1
    stress_sum = 0.0
    stress_days = 0
    critical_sum = 0.0
    critical_days = 0
    for d in range(n):
        if sow_day < 0 and d >= sow_start:
            if sm_r >= SOW_SM_THRESHOLD or d >= sow_end:
                sow_day = d

        tm = 0.5 * (tmax[d] + tmin[d])
        dtr = tmax[d] - tmin[d]
        if dtr < 0.0:
            dtr = 0.0
        et0 = HARGREAVES_COEF * radn[d] * (tm + 17.8) * math.sqrt(dtr)
        if et0 < 0.0:
            et0 = 0.0

        crop_active = sow_day >= 0 and d >= sow_day and d < sow_day + CROP_DURATION_DAYS
        if crop_active:
            demand = et0
        else:
            demand = BARE_ET_FRAC * et0

        # rootzone bucket (contains the full profile; receives all rain)
        w_r = sm_r * DEPTH_ROOTZONE + ppt[d]
        if w_r > SM_SAT * DEPTH_ROOTZONE:
            w_r = SM_SAT * DEPTH_ROOTZONE
        avail = w_r - SM_MIN * DEPTH_ROOTZONE
        if avail < 0.0:
            avail = 0.0
        et_act = demand if demand <= avail else avail
        w_r -= et_act
        excess = w_r - SM_FC * DEPTH_ROOTZONE
        if excess > 0.0:
            w_r -= DRAIN_RATE_ROOTZONE * excess
        sm_r = w_r / DEPTH_ROOTZONE

        if crop_active:
            if demand > 0.0:
                met = et_act / demand
            else:
                met = 1.0
            stress_sum += met
            stress_days += 1
            age = d - sow_day
            if CRITICAL_START <= age < CRITICAL_END:
                critical_sum += met
                critical_days += 1

        # surface bucket (diagnostic top layer, dries and rewets fast)
        w_s = sm_s * DEPTH_SURFACE + ppt[d]
        if w_s > SM_SAT * DEPTH_SURFACE:
            w_s = SM_SAT * DEPTH_SURFACE
        avail_s = w_s - SM_MIN * DEPTH_SURFACE
        if avail_s < 0.0:
            avail_s = 0.0
        dem_s = SURFACE_ET_FRAC * et0
        e_s = dem_s if dem_s <= avail_s else avail_s
        w_s -= e_s
        excess_s = w_s - SM_FC * DEPTH_SURFACE
        if excess_s > 0.0:
            w_s -= DRAIN_RATE_SURFACE * excess_s
        sm_s = w_s / DEPTH_SURFACE

        sm_s_out[d] = sm_s
        sm_r_out[d] = sm_r

    if stress_days > 0:
        stress_mean = stress_sum / stress_days
    else:
        stress_mean = 1.0
    if critical_days > 0:
        critical_mean = critical_sum / critical_days
    else:
        critical_mean = 1.0
    return sow_day, stress_mean, critical_mean


bucket_water_balance_numpy = _bucket_loop
bucket_water_balance_numba = njit(cache=True)(_bucket_loop) if HAVE_NUMBA else None

if USE_NUMBA:
    bucket_water_balance = bucket_water_balance_numba
else:
    bucket_water_balance = bucket_water_balance_numpy
