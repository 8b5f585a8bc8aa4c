from .inference import (
    TestResult,
    compare_conditions,
    one_way_anova,
    pearson_regression,
    shapiro_wilk,
    tukey_hsd,
)
from .special import (
    betainc,
    f_sf,
    studentized_range_cdf,
    studentized_range_ppf,
    studentized_range_sf,
    t_ppf_two_sided,
    t_sf_two_sided,
)
