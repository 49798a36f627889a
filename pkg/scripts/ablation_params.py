"""Parameter counts (float32 megabytes) of the default classifier and its ablations."""

from pct3d.network import ABLATIONS, ModelConfig, PointCloudTransformer, ablation_config, param_count


def main():
    base = ModelConfig()
    print("variant,parameters,megabytes")
    for name in ABLATIONS:
        pc = param_count(PointCloudTransformer(ablation_config(base, name)))
        print(f"{name},{pc.count},{pc.megabytes:.2f}")


if __name__ == "__main__":
    main()
