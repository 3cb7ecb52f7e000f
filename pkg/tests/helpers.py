from ltnctrl.data import build_data_matrices, check_richness, collect_random_dataset


def rich_data(sys_, T_d, seed, u_box=None, tries=50):
    """First rich dataset among consecutive seeds, or ``None``."""
    u_box = u_box if u_box is not None else (-sys_.s, sys_.s)
    for k in range(tries):
        ds = collect_random_dataset(sys_, T_d, None, u_box, seed=seed * 1000 + k)
        dm = build_data_matrices(ds, sys_.alpha, sys_.s)
        if check_richness(dm).passed:
            return ds, dm
    return None
