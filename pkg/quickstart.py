"""
快速测试脚本 - 在粗网格上执行一次完整流程

用于检查依赖与配置是否正确：求一个次临界极值函数，检查 Pohozaev 缺陷，
再对平坦半球做一次很短的延拓。不写账本、不推送。
"""

from core.model import DomainSpec, SubcriticalProblem
from geometry import make_domain
from pohozaev import pohozaev_defect
from solver import continue_to_critical, minimize_quotient


def main():
    """单次运行测试"""
    spec = DomainSpec(n=3, s=1.0, family="perturbed-half-ball", kappa=-1.0, radius=1.0, meridian_samples=8)
    mesh, _, curvature = make_domain(spec, verbose=True)
    print(f"✅ 网格: {mesh.num_nodes} 节点, H(0) = {curvature.mean_curvature_trace:.3g}")

    p = spec.critical_exponent - 0.2
    result = minimize_quotient(SubcriticalProblem(mesh=mesh, s=spec.s, p=p), verbose=True)
    print(f"✅ μ_(s,p) = {result.mu:.8g}  残差 {result.residual:.2e}  正: {result.positive}")

    report = pohozaev_defect(mesh, result.solution, 0.0, p, spec.s)
    print(f"✅ Pohozaev 缺陷 {report.defect:.3e}（左 {report.lhs_volume:.4g}，右 {report.rhs_boundary:.4g}）")

    print("\n" + "=" * 80)
    print("短延拓: 2⋆ − p ∈ {0.2, 0.1}")
    print("=" * 80)
    grid = (spec.critical_exponent - 0.2, spec.critical_exponent - 0.1)
    trace = continue_to_critical(SubcriticalProblem(mesh=mesh, s=spec.s, p=grid[0]), grid, gap_min=0.1)
    for record in trace.records:
        print(f"  p={record.p:.4f}  μ={record.mu:.6g}  sup={record.sup_norm:.4g}  气泡={record.bubble_count}")

    print()
    print("💡 提示:")
    print("  - 完整实验: python main.py sweep --config config.yaml")
    print("  - 修改配置: 编辑 config.yaml 或使用 --set geometry.kappa=1")
    print("  - 飞书通知: 在 .env 中设置 FEISHU_WEBHOOK_URL")


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        print("\n\n⚠️  已中断")
    except Exception as e:
        print(f"\n\n❌ 错误: {e}")
        import traceback
        traceback.print_exc()
